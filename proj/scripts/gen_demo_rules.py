#!/usr/bin/env python3
"""Generates fixtures/mock_rules_demo.jsonl from the bundled dataset.

The demo mock answers the gold label whenever a retrieved exemplar in the
prompt shares the gold actor, and a seeded-uniform label otherwise. Two rule
blocks keep matching unambiguous: rules over the retrieval-style input line
(New text: "...") come first, then rules over the plain input line
(Text: "..."), so exemplar lines inside a prompt can never shadow the input.
"""
import json
import pathlib

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def rule(match_prefix: str, text: str, actor: str, reason: str, cause: str) -> str:
    gold = f'("{actor}", "{reason}", "{cause}")'
    respond = "{{if_retrieved_actor=" + actor + "}}" + gold + "{{else}}{{random_label}}{{end}}"
    return json.dumps({"match": f'{match_prefix} "{text}"', "respond": respond},
                      ensure_ascii=False)


def main() -> int:
    records = [json.loads(line)
               for line in (FIXTURES / "dataset.jsonl").read_text(encoding="utf-8").splitlines()
               if line.strip()]
    lines = []
    for prefix in ("New text:", "Text:"):
        for r in records:
            lines.append(rule(prefix, r["text"], r["actor"], r["reason"], r["cause"]))
    lines.append(json.dumps({"fallback": '("Customer", "Refused Delivery", "Late Delivery")'}))
    out = FIXTURES / "mock_rules_demo.jsonl"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(lines)} lines)")
    return 0


if __name__ == "__main__":
    main()
