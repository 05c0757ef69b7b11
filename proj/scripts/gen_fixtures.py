#!/usr/bin/env python3
"""One-time generator for the bundled synthetic fixture.

Produces fixtures/taxonomy.json (73 leaf labels over 4 actors) and
fixtures/dataset.jsonl (1,500 short Vietnamese-flavoured logistics
messages). Message text is correlated with the gold actor through
actor-specific vocabulary so that nearest-neighbour retrieval mostly finds
same-actor exemplars; a fraction of "hard" messages uses only shared
vocabulary so deeper retrieval (k=6 vs k=3) finds strictly more actor
matches. Fully deterministic: fixed seed, fixed pools.
"""
import json
import pathlib
import random
import unicodedata

SEED = 20250811
OUT_DIR = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

TAXONOMY = {
    "Customer": {
        "Refused Delivery": ["Late Delivery", "Damaged Package", "Changed Mind",
                             "Wrong Product Received"],
        "Unavailable": ["On Vacation", "Not At Home", "No Answer Phone", "Busy At Work"],
        "Changed Address": ["Wrong Time", "Moved House", "New Workplace"],
        "Incorrect Information": ["Wrong Phone Number", "Incomplete Address"],
        "Payment Issue": ["COD Not Ready", "Refused To Pay", "Wants Bank Transfer"],
        "Thay đổi thông tin": ["Thời gian nhận hàng", "Địa điểm nhận hàng", "Người nhận thay"],
    },
    "Shop": {
        "Thay đổi thông tin": ["Thời gian lấy hàng", "Địa chỉ lấy hàng", "Thông tin liên hệ"],
        "Incorrect Information": ["Wrong Address", "Wrong Item Listed", "Wrong Weight"],
        "Unavailable": ["Shop Closed", "Owner Away"],
        "Product Issue": ["Out of Stock", "Wrong Product", "Defective Product",
                          "Restock Pending"],
        "Packaging Issue": ["Fragile Item", "Wrong Box Size", "Missing Seal"],
        "Cancelled Order": ["Duplicate Order", "Pricing Error", "Customer Request"],
        "Schedule Conflict": ["Late Handover", "Early Pickup Request"],
    },
    "Delivery Service": {
        "Incorrect Information": ["Missing Contact Info", "Wrong Route Code", "Lost Waybill"],
        "Delivery Failure": ["Vehicle Breakdown", "Package Lost", "Package Damaged",
                             "Late Delivery"],
        "Unavailable": ["No Driver Assigned", "Hub Overloaded"],
        "Schedule Change": ["Postponed Pickup", "Rerouted Shipment", "Shift Change"],
        "Handover Issue": ["Wrong Hub Transfer", "Missed Handover", "Unscanned Parcel"],
        "Capacity Issue": ["Truck Full", "Route Overbooked", "Peak Season Backlog",
                           "Sorting Delay"],
    },
    "External Factor": {
        "Weather": ["Heavy Rain", "Storm", "Flooded Roads", "Extreme Heat"],
        "Traffic": ["Road Congestion", "Road Closed", "Accident On Route"],
        "Regulation": ["Customs Hold", "Quarantine Check", "Area Lockdown"],
        "Holiday": ["Public Holiday", "Lunar New Year", "Festival Closure"],
        "Infrastructure": ["Power Outage", "Bridge Repair"],
    },
}

ACTOR_TOKENS = {
    "Customer": ["khách", "người nhận", "anh khách", "chị khách", "bên nhận", "khách hàng",
                 "người mua", "chú khách"],
    "Shop": ["shop", "cửa tiệm", "người gửi", "chủ shop", "bên gửi", "nhà bán", "tiệm",
             "shop gửi"],
    "Delivery Service": ["shipper", "bưu tá", "tài xế", "kho trung chuyển", "bên vận chuyển",
                         "nhân viên giao", "trạm giao", "đội giao"],
    "External Factor": ["trời mưa", "bão lớn", "đường ngập", "kẹt xe", "lễ tết", "hải quan",
                        "thiên tai", "sự cố đường"],
}

ACTOR_VERBS = {
    "Customer": ["từ chối nhận", "không nghe máy", "đổi ý", "đi vắng", "hẹn giao lại",
                 "chưa chuyển khoản", "muốn đổi địa chỉ", "bận việc"],
    "Shop": ["hẹn lấy hàng", "báo hết hàng", "đổi thông tin", "hủy đơn", "đóng gói lại",
             "báo sai cân nặng", "chưa chuẩn bị hàng", "đổi giờ lấy"],
    "Delivery Service": ["giao trễ", "thất lạc kiện", "hỏng xe", "dồn tuyến", "bỏ quét mã",
                         "chuyển nhầm kho", "hoãn lấy hàng", "quá tải đơn"],
    "External Factor": ["gây chậm chuyến", "làm tắc đường", "buộc tạm ngưng", "gây ngập kho",
                        "làm hoãn phát", "chặn tuyến giao"],
}

SHARED_TOKENS = ["đơn", "hàng", "giao", "nhận", "ngày", "mai", "hẹn", "lại", "chưa", "được",
                 "không", "vui lòng", "kiểm tra", "giúp", "em", "ạ", "nhé", "bên", "mình",
                 "đã", "gọi", "báo", "sớm", "hỗ trợ", "xử lý", "gấp", "cần", "xác nhận",
                 "thông tin", "sđt", "địa chỉ", "thời gian", "buổi sáng", "buổi chiều",
                 "buổi tối", "kiện", "mã đơn", "tuyến", "ca giao", "hôm nay", "tuần sau",
                 "liên hệ", "phản hồi", "cập nhật", "ghi chú", "lịch", "kho", "chuyến"]

SHARED_OPENERS = ["đơn này", "kiện hàng", "mã đơn này", "đơn hôm nay", "lịch giao",
                  "chuyến hàng", "đơn gấp", "kiện này"]

ONE_WORD = ["hủy", "hoãn", "gấp", "chờ", "ok", "chốt", "dời", "kẹt"]


def nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def build_taxonomy() -> dict:
    actors = []
    size = 0
    for actor, reasons in TAXONOMY.items():
        rlist = []
        for reason, causes in reasons.items():
            rlist.append({"name": reason, "causes": list(causes)})
            size += len(causes)
        actors.append({"name": actor, "reasons": rlist})
    return {"size": size, "delimiter": "–", "actors": actors}


def leaf_list():
    leaves = []
    for actor, reasons in TAXONOMY.items():
        for reason, causes in reasons.items():
            for cause in causes:
                leaves.append((actor, reason, cause))
    return leaves


def sample_length(rng: random.Random) -> int:
    # Mostly short utterances, about a quarter past 10 words.
    r = rng.random()
    if r < 0.60:
        return rng.randint(3, 8)
    if r < 0.74:
        return rng.randint(9, 10)
    if r < 0.93:
        return rng.randint(11, 15)
    return rng.randint(16, 26)


def make_text(rng: random.Random, actor: str, hard: bool, length: int) -> str:
    words: list[str] = []
    if hard:
        words.extend(rng.choice(SHARED_OPENERS).split())
    else:
        words.extend(rng.choice(ACTOR_TOKENS[actor]).split())
        words.extend(rng.choice(ACTOR_VERBS[actor]).split())
    while len(words) < length:
        pool = SHARED_TOKENS
        if not hard and rng.random() < 0.22:
            pool = ACTOR_TOKENS[actor] + ACTOR_VERBS[actor]
        words.extend(rng.choice(pool).split())
    return " ".join(words[:length])


def main() -> int:
    rng = random.Random(SEED)
    OUT_DIR.mkdir(parents=True, exist_ok=True)

    taxonomy = build_taxonomy()
    leaves = leaf_list()
    assert taxonomy["size"] == 73, taxonomy["size"]
    assert len(leaves) == 73

    (OUT_DIR / "taxonomy.json").write_text(
        nfc(json.dumps(taxonomy, indent=2, ensure_ascii=False)) + "\n", encoding="utf-8")

    # Label assignment: every leaf at least once, then a long-tailed draw.
    n = 1500
    weights = [1.0 / (i + 1) ** 0.85 for i in range(len(leaves))]
    order = list(range(len(leaves)))
    rng.shuffle(order)
    assignments = [leaves[i] for i in order]  # each leaf once
    while len(assignments) < n:
        assignments.append(leaves[rng.choices(order, weights=weights, k=1)[0]])
    rng.shuffle(assignments)

    seen_texts = set()
    lines = []
    special_long = rng.randrange(200, 400)   # one 49-word message
    one_word_slots = set(rng.sample(range(n), 9))
    for i, (actor, reason, cause) in enumerate(assignments):
        hard = rng.random() < 0.12
        if i == special_long:
            length = 49
            hard = False
        elif i in one_word_slots:
            length = 1
        else:
            length = sample_length(rng)

        if length == 1:
            text = rng.choice(ONE_WORD)
        else:
            text = make_text(rng, actor, hard, length)
        while text in seen_texts:
            text = text + " " + rng.choice(SHARED_TOKENS)
        seen_texts.add(text)

        rec = {"id": f"msg{i + 1:04d}", "text": nfc(text), "actor": actor,
               "reason": reason, "cause": cause}
        lines.append(json.dumps(rec, ensure_ascii=False))

    (OUT_DIR / "dataset.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # Recount for the record.
    lens = [len(t.split()) for t in seen_texts]
    all_lens = []
    for line in lines:
        all_lens.append(len(json.loads(line)["text"].split()))
    mean = sum(all_lens) / len(all_lens)
    over10 = sum(1 for L in all_lens if L > 10)
    print(f"messages={len(lines)} mean={mean:.4f} max={max(all_lens)} "
          f"min={min(all_lens)} over10={over10}")
    return 0


if __name__ == "__main__":
    main()
