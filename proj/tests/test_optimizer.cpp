#include "promptforge/optimizer.hpp"

#include <algorithm>

#include "doctest.h"
#include "json.hpp"
#include "promptforge/errors.hpp"
#include "testsupport.hpp"

using namespace promptforge;
using pftest::fixture_messages;
using pftest::fixture_taxonomy;

namespace {

const PromptLibrary& library() {
    static PromptLibrary lib = PromptLibrary::load(pftest::asset_manifest());
    return lib;
}

PromptCandidate rag_candidate(int k, const std::string& id = "cand") {
    PromptCandidate c;
    c.id = id;
    c.strategy = Strategy::rag_k;
    c.k = k;
    c.instruction = library().get("base_instruction").body;
    c.provenance = {1, "", "seed"};
    return c;
}

/// Small evaluation environment over fixture data: train prefix indexed,
/// val prefix evaluated, clients owned by the env.
struct EvalEnv {
    std::vector<AnnotatedMessage> train;
    std::vector<AnnotatedMessage> val;
    std::map<std::string, AnnotatedMessage> train_by_id;
    Embedder embedder{EmbedderConfig{}};
    std::optional<VectorIndex> index;
    std::unique_ptr<MockClient> target;
    std::unique_ptr<MockClient> optimizer;
    std::map<std::string, std::optional<Rationale>> rationale_cache;
    DecodingConfig decoding;

    EvalEnv(std::size_t n_train, std::size_t n_val) {
        DatasetSplit s = split(fixture_messages(), {0.70, 0.15, 0.15}, 42);
        std::map<std::string, AnnotatedMessage> by_id;
        for (const auto& m : fixture_messages()) by_id[m.id] = m;
        for (std::size_t i = 0; i < n_train; ++i) train.push_back(by_id.at(s.train_ids[i]));
        for (std::size_t i = 0; i < n_val; ++i) val.push_back(by_id.at(s.val_ids[i]));
        train_by_id = message_index(train);
        index = VectorIndex::build(train, embedder);
    }

    EvalContext ctx() {
        EvalContext c;
        c.val_set = &val;
        c.index = &*index;
        c.train_by_id = &train_by_id;
        c.embedder = &embedder;
        c.target = target.get();
        c.optimizer = optimizer.get();
        c.taxonomy = &fixture_taxonomy();
        c.library = &library();
        c.decoding = decoding;
        c.eval_seed = 42;
        c.m_samples = 3;
        c.rationale_cache = &rationale_cache;
        return c;
    }
};

/// Picks a different cause under the same (actor, reason) node, so the
/// prediction stays a valid leaf with exactly the cause level wrong.
FrameLabel sibling_cause(const FrameLabel& gold) {
    for (const auto& a : fixture_taxonomy().actors()) {
        if (a.name != gold.actor) continue;
        for (const auto& r : a.reasons) {
            if (r.name != gold.reason) continue;
            for (const auto& c : r.causes)
                if (c != gold.cause) return FrameLabel{gold.actor, gold.reason, c};
        }
    }
    throw std::runtime_error("no sibling cause for " + gold.cause);
}

std::filesystem::path write_wrong_cause_rules(const pftest::TempDir& dir,
                                              const std::vector<AnnotatedMessage>& messages) {
    std::string out;
    for (const auto& m : messages) {
        nlohmann::json rule;
        rule["match"] = "ext: \"" + m.text + "\"";
        rule["respond"] = pftest::tuple_of(sibling_cause(m.label));
        out += rule.dump() + "\n";
    }
    out += nlohmann::json{{"fallback", "(\"Customer\", \"Refused Delivery\", \"Late Delivery\")"}}
               .dump() +
           "\n";
    auto p = dir.file("wrong_cause.jsonl");
    pftest::write_file(p, out);
    return p;
}

const std::string kRefineReply =
    "Step 1: the prompt missed actor cues.\nRefined Prompt: \"Identify the actor, the reason "
    "category, and the fine-grained cause. Return output as JSON.\"";
const std::string kDebateReply =
    "Agent 1: variant A is clearer.\nFinal Improved Prompt:\nWhen analyzing a logistics message, "
    "identify who is responsible, the reason category, and the fine-grained cause. Return output "
    "as JSON.";

std::filesystem::path write_optimizer_stub_rules(const pftest::TempDir& dir,
                                                 const std::string& name = "opt_rules.jsonl") {
    std::string out;
    out += nlohmann::json{{"match", "Analyze the error in each case"},
                          {"respond", kRefineReply}}
               .dump() +
           "\n";
    out += nlohmann::json{{"match", "propose a new improved prompt"},
                          {"respond", kDebateReply}}
               .dump() +
           "\n";
    out += nlohmann::json{{"fallback", "(\"Customer\", \"Refused Delivery\", \"Late Delivery\")"}}
               .dump() +
           "\n";
    auto p = dir.file(name);
    pftest::write_file(p, out);
    return p;
}

ErrorCase make_error_case(const std::string& id, std::vector<std::string> wrong) {
    ErrorCase ec;
    ec.message = {id, "text of " + id, make_label("Customer", "Unavailable", "On Vacation")};
    ec.predicted = make_label("Customer", "Unavailable", "Not At Home");
    ec.wrong_levels = std::move(wrong);
    return ec;
}

}  // namespace

TEST_CASE("evaluate_candidate under an always-gold mock is perfect") {
    pftest::TempDir dir("eval");
    EvalEnv env(120, 15);
    env.target = std::make_unique<MockClient>(
        load_mock_rules(pftest::write_gold_rules(dir, env.val)), &fixture_taxonomy());

    for (int k : {0, 3}) {
        auto rep = evaluate_candidate(rag_candidate(k), env.ctx());
        CHECK(rep.n() == 15);
        CHECK(rep.exact_match == 1.0);
        CHECK(rep.level_acc[0] == 1.0);
        CHECK(rep.level_acc[1] == 1.0);
        CHECK(rep.level_acc[2] == 1.0);
        CHECK(rep.validity_rate == 1.0);
        CHECK(rep.parse_rate == 1.0);
        CHECK(rep.error_cases.empty());
        CHECK(rep.calls_used == 15);
        if (k > 0)
            for (const auto& item : rep.items) CHECK(item.exemplar_ids.size() == 3);
    }
}

TEST_CASE("evaluate_candidate scores levels independently") {
    pftest::TempDir dir("eval2");
    EvalEnv env(80, 12);
    env.target = std::make_unique<MockClient>(
        load_mock_rules(write_wrong_cause_rules(dir, env.val)), &fixture_taxonomy());

    auto rep = evaluate_candidate(rag_candidate(0), env.ctx());
    CHECK(rep.exact_match == 0.0);
    CHECK(rep.level_acc[0] == 1.0);
    CHECK(rep.level_acc[1] == 1.0);
    CHECK(rep.level_acc[2] == 0.0);
    CHECK(rep.validity_rate == 1.0);
    CHECK(rep.error_cases.size() == 12);
    for (const auto& ec : rep.error_cases) {
        CHECK(ec.wrong_levels == std::vector<std::string>{"cause"});
        CHECK(ec.predicted.has_value());
    }

    // Consistency: exact_match <= each level accuracy; recompute matches.
    for (double acc : rep.level_acc) CHECK(rep.exact_match <= acc);
    std::size_t exact = 0;
    for (const auto& it : rep.items)
        if (it.exact()) ++exact;
    CHECK(rep.exact_match == static_cast<double>(exact) / rep.n());
}

TEST_CASE("evaluate_candidate classifies unparseable and invalid outputs") {
    pftest::TempDir dir("eval3");
    EvalEnv env(50, 8);

    SUBCASE("unparseable fallback") {
        pftest::write_file(dir.file("junk.jsonl"),
                           nlohmann::json{{"fallback", "no label here"}}.dump() + "\n");
        env.target =
            std::make_unique<MockClient>(load_mock_rules(dir.file("junk.jsonl")), &fixture_taxonomy());
        auto rep = evaluate_candidate(rag_candidate(0), env.ctx());
        CHECK(rep.parse_rate == 0.0);
        CHECK(rep.validity_rate == 0.0);
        CHECK(rep.exact_match == 0.0);
        CHECK(rep.calls_used == 16);  // one re-ask per item
        for (const auto& ec : rep.error_cases)
            CHECK(ec.wrong_levels == std::vector<std::string>{"actor", "reason", "cause"});
    }
    SUBCASE("invalid label is parseable but not valid") {
        pftest::write_file(dir.file("ghost.jsonl"),
                           nlohmann::json{{"fallback", "(\"Ghost\", \"X\", \"Y\")"}}.dump() + "\n");
        env.target = std::make_unique<MockClient>(load_mock_rules(dir.file("ghost.jsonl")),
                                                  &fixture_taxonomy());
        auto rep = evaluate_candidate(rag_candidate(0), env.ctx());
        CHECK(rep.parse_rate == 1.0);
        CHECK(rep.validity_rate == 0.0);
        CHECK(rep.calls_used == 8);  // invalid labels never re-ask
        for (const auto& it : rep.items) CHECK(it.error_kind == "invalid_label");
    }
}

TEST_CASE("leakage guard refuses an index containing validation ids") {
    pftest::TempDir dir("leak");
    EvalEnv env(60, 10);
    // Rebuild the index with one validation message smuggled in.
    auto poisoned = env.train;
    poisoned.push_back(env.val.front());
    env.index = VectorIndex::build(poisoned, env.embedder);
    env.target = std::make_unique<MockClient>(
        load_mock_rules(pftest::write_gold_rules(dir, env.val)), &fixture_taxonomy());
    CHECK_THROWS_AS(evaluate_candidate(rag_candidate(3), env.ctx()), DataError);
}

TEST_CASE("budget exhaustion mid-evaluation carries partial progress") {
    pftest::TempDir dir("budget");
    EvalEnv env(40, 10);
    auto rules = load_mock_rules(pftest::write_gold_rules(dir, env.val));
    MockClient raw(rules, &fixture_taxonomy());
    CallBudget budget(4);
    BudgetedClient limited(raw, budget);
    env.target = nullptr;
    auto ctx = env.ctx();
    ctx.target = &limited;
    try {
        evaluate_candidate(rag_candidate(0), ctx);
        FAIL("expected EvalTruncatedError");
    } catch (const EvalTruncatedError& e) {
        CHECK(e.partial().n() == 4);
        CHECK(e.partial().exact_match == 1.0);
    }
}

TEST_CASE("mutate applies exactly one operator, seeded") {
    const auto& lib = library();

    SUBCASE("operator frequencies match the seeded replay oracle") {
        int counts[3] = {0, 0, 0};
        int expected[3] = {0, 0, 0};
        auto base = rag_candidate(3);
        for (uint64_t seed = 0; seed < 1000; ++seed) {
            PromptCandidate m = mutate(base, seed, lib);
            if (m.provenance.transformation == "mutate:reorder_exemplars") ++counts[0];
            if (m.provenance.transformation == "mutate:toggle_specificity") ++counts[1];
            if (m.provenance.transformation == "mutate:cot_switch") ++counts[2];
            std::mt19937_64 rng(seed);
            ++expected[rng() % 3];
        }
        CHECK(counts[0] == expected[0]);
        CHECK(counts[1] == expected[1]);
        CHECK(counts[2] == expected[2]);
        CHECK(counts[0] + counts[1] + counts[2] == 1000);
    }
    SUBCASE("reorder on a 0-exemplar candidate records provenance, changes nothing") {
        auto base = rag_candidate(0);
        // Find a seed whose first draw selects the reorder operator.
        uint64_t seed = 0;
        while (std::mt19937_64(seed)() % 3 != 0) ++seed;
        PromptCandidate m = mutate(base, seed, lib);
        CHECK(m.provenance.transformation == "mutate:reorder_exemplars");
        CHECK(apply_order(0, m.exemplar_order).empty());
        CHECK(m.instruction == base.instruction);
        CHECK(m.cot_mode == base.cot_mode);
    }
    SUBCASE("reorder on k>=2 yields a different effective order") {
        auto base = rag_candidate(6);
        uint64_t seed = 0;
        while (std::mt19937_64(seed)() % 3 != 0) ++seed;
        PromptCandidate m = mutate(base, seed, lib);
        CHECK(apply_order(6, m.exemplar_order) != apply_order(6, base.exemplar_order));
    }
    SUBCASE("specificity toggle is an involution") {
        auto base = rag_candidate(3);
        uint64_t seed = 0;
        while (std::mt19937_64(seed)() % 3 != 1) ++seed;
        PromptCandidate once = mutate(base, seed, lib);
        CHECK(once.instruction != base.instruction);
        CHECK(once.instruction.find(lib.get("specificity_clause").body) != std::string::npos);
        PromptCandidate twice = mutate(once, seed, lib);
        CHECK(twice.instruction == base.instruction);
    }
    SUBCASE("cot switch cycles plain -> cot -> auto_cot -> plain") {
        auto base = rag_candidate(3);
        uint64_t seed = 0;
        while (std::mt19937_64(seed)() % 3 != 2) ++seed;
        PromptCandidate a = mutate(base, seed, lib);
        CHECK(a.cot_mode == CotMode::cot);
        PromptCandidate b = mutate(a, seed, lib);
        CHECK(b.cot_mode == CotMode::auto_cot);
        PromptCandidate c = mutate(b, seed, lib);
        CHECK(c.cot_mode == CotMode::plain);
    }
}

TEST_CASE("select_error_cases ranks by pattern frequency, ties by id") {
    std::vector<ErrorCase> cases;
    // 5 cause-only, 3 actor-only, 2 all-three.
    for (int i = 0; i < 5; ++i) cases.push_back(make_error_case("c" + std::to_string(i), {"cause"}));
    for (int i = 0; i < 3; ++i) cases.push_back(make_error_case("a" + std::to_string(i), {"actor"}));
    for (int i = 0; i < 2; ++i)
        cases.push_back(make_error_case("z" + std::to_string(i), {"actor", "reason", "cause"}));

    auto picked = select_error_cases(cases, 3);
    REQUIRE(picked.size() == 3);
    CHECK(picked[0].message.id == "c0");
    CHECK(picked[1].message.id == "c1");
    CHECK(picked[2].message.id == "c2");

    // Oracle: stable framework-free re-sort.
    auto picked7 = select_error_cases(cases, 7);
    std::map<std::string, int> freq;
    auto key = [](const ErrorCase& e) {
        std::string k;
        for (const auto& w : e.wrong_levels) k += w + ",";
        return k;
    };
    for (const auto& c : cases) ++freq[key(c)];
    std::vector<ErrorCase> want = cases;
    std::sort(want.begin(), want.end(), [&](const ErrorCase& x, const ErrorCase& y) {
        if (freq[key(x)] != freq[key(y)]) return freq[key(x)] > freq[key(y)];
        return x.message.id < y.message.id;
    });
    for (std::size_t i = 0; i < picked7.size(); ++i)
        CHECK(picked7[i].message.id == want[i].message.id);
}

TEST_CASE("refine_with_errors extracts the refined block") {
    pftest::TempDir dir("refine");
    MockClient opt(load_mock_rules(write_optimizer_stub_rules(dir)), &fixture_taxonomy());
    auto base = rag_candidate(6, "r1-k6");
    DecodingConfig dec;

    SUBCASE("empty error list: unchanged, no model call") {
        auto c = refine_with_errors(opt, library(), base, {}, 3, dec, fixture_taxonomy());
        CHECK(c.instruction == base.instruction);
        CHECK(c.provenance.transformation == "refine:noop");
    }
    SUBCASE("fixed refined block becomes the instruction verbatim") {
        auto c = refine_with_errors(opt, library(), base, {make_error_case("e1", {"cause"})}, 3,
                                    dec, fixture_taxonomy());
        CHECK(c.instruction ==
              "Identify the actor, the reason category, and the fine-grained cause. Return "
              "output as JSON.");
        CHECK(c.provenance.transformation == "refine");
        CHECK(c.provenance.parent_id == "r1-k6");
        CHECK(c.strategy == base.strategy);
        CHECK(c.k == base.k);
    }
    SUBCASE("reply without the block raises ExtractionError") {
        pftest::write_file(dir.file("noblock.jsonl"),
                           nlohmann::json{{"fallback", "no marker here"}}.dump() + "\n");
        MockClient bad(load_mock_rules(dir.file("noblock.jsonl")), &fixture_taxonomy());
        CHECK_THROWS_AS(refine_with_errors(bad, library(), base,
                                           {make_error_case("e1", {"cause"})}, 3, dec,
                                           fixture_taxonomy()),
                        ExtractionError);
    }
}

TEST_CASE("debate renders the variants and extracts the consensus block") {
    pftest::TempDir dir("debate");
    MockClient opt(load_mock_rules(write_optimizer_stub_rules(dir)), &fixture_taxonomy());
    DecodingConfig dec;

    auto a = rag_candidate(6, "va");
    a.instruction = "Prompt text one.";
    auto b = rag_candidate(6, "vb");
    b.instruction = "Prompt text two.";

    SUBCASE("rendered prompt matches the golden file") {
        std::string prompt = render_debate_prompt(library(), {a, b});
        CHECK(prompt == pftest::read_file(pftest::golden("debate_prompt.txt")));
    }
    SUBCASE("consensus block becomes the new instruction") {
        auto c = debate(opt, library(), {a, b}, dec);
        CHECK(c.instruction ==
              "When analyzing a logistics message, identify who is responsible, the reason "
              "category, and the fine-grained cause. Return output as JSON.");
        CHECK(c.provenance.transformation == "debate");
        CHECK(c.strategy == a.strategy);
        CHECK(c.k == a.k);
    }
    SUBCASE("extraction failure falls back to the first variant") {
        pftest::write_file(dir.file("noblock.jsonl"),
                           nlohmann::json{{"fallback", "no consensus marker"}}.dump() + "\n");
        MockClient bad(load_mock_rules(dir.file("noblock.jsonl")), &fixture_taxonomy());
        auto c = debate(bad, library(), {a, b}, dec);
        CHECK(c.instruction == a.instruction);
        CHECK(c.provenance.transformation == "debate:fallback");
    }
    SUBCASE("fewer than two variants refused") {
        CHECK_THROWS_AS(debate(opt, library(), {a}, dec), ConfigError);
    }
}

TEST_CASE("generate_candidates round 1 spans the k options") {
    pftest::TempDir dir("gen");
    MockClient opt(load_mock_rules(write_optimizer_stub_rules(dir)), &fixture_taxonomy());
    OptimizerConfig cfg;
    DecodingConfig dec;

    auto cands = generate_candidates(1, std::nullopt, library(), cfg, opt, dec,
                                     fixture_taxonomy());
    REQUIRE(cands.size() == 3);
    CHECK(cands[0].k == 0);
    CHECK(cands[1].k == 3);
    CHECK(cands[2].k == 6);
    for (const auto& c : cands) {
        CHECK(c.strategy == Strategy::rag_k);
        CHECK(c.provenance.transformation == "seed");
        CHECK(c.instruction == library().get("base_instruction").body);
    }

    SUBCASE("minimal config yields a single zero-shot candidate") {
        OptimizerConfig mini;
        mini.candidates_per_round = 1;
        mini.k_options = {0};
        auto one = generate_candidates(1, std::nullopt, library(), mini, opt, dec,
                                       fixture_taxonomy());
        REQUIRE(one.size() == 1);
        CHECK(one[0].k == 0);
    }
}

TEST_CASE("generate_candidates round 2 produces refine, mutate, debate") {
    pftest::TempDir dir("gen2");
    MockClient opt(load_mock_rules(write_optimizer_stub_rules(dir)), &fixture_taxonomy());
    OptimizerConfig cfg;
    DecodingConfig dec;

    SolutionPair incumbent;
    incumbent.candidate = rag_candidate(6, "r1-k6");
    incumbent.round = 1;
    incumbent.report.exact_match = 0.8;
    incumbent.report.error_cases = {make_error_case("e1", {"cause"}),
                                    make_error_case("e2", {"cause"})};

    auto cands = generate_candidates(2, incumbent, library(), cfg, opt, dec, fixture_taxonomy());
    REQUIRE(cands.size() == 3);
    std::set<std::string> kinds;
    for (const auto& c : cands) {
        std::string t = c.provenance.transformation;
        kinds.insert(t.substr(0, t.find(':')));
        CHECK(c.provenance.round == 2);
    }
    CHECK(kinds == std::set<std::string>{"refine", "mutate", "debate"});
    CHECK(cands[0].id == "r2-refine");
    CHECK(cands[1].id == "r2-mutate");
    CHECK(cands[2].id == "r2-debate");

    SUBCASE("optimizer failure degrades the refine slot to a mutation") {
        pftest::write_file(dir.file("broken.jsonl"),
                           nlohmann::json{{"fallback", "no marker"}}.dump() + "\n");
        MockClient bad(load_mock_rules(dir.file("broken.jsonl")), &fixture_taxonomy());
        auto degraded = generate_candidates(2, incumbent, library(), cfg, bad, dec,
                                            fixture_taxonomy());
        REQUIRE(degraded.size() == 3);
        CHECK(degraded[0].provenance.transformation.find(":degraded") != std::string::npos);
        CHECK(degraded[0].provenance.transformation.substr(0, 6) == "mutate");
    }
    SUBCASE("rounds > 1 need an incumbent") {
        CHECK_THROWS_AS(generate_candidates(2, std::nullopt, library(), cfg, opt, dec,
                                            fixture_taxonomy()),
                        ConfigError);
    }
}

TEST_CASE("run_loop bookkeeping: 3 rounds x 3 candidates = 9 pairs") {
    pftest::TempDir dir("loop");
    EvalEnv env(150, 12);

    // Target answers gold; optimizer serves refine/debate blocks. Rules are
    // combined into one file: stub rules first, then per-message rules.
    std::string rules;
    rules += nlohmann::json{{"match", "Analyze the error in each case"}, {"respond", kRefineReply}}
                 .dump() +
             "\n";
    rules += nlohmann::json{{"match", "propose a new improved prompt"}, {"respond", kDebateReply}}
                 .dump() +
             "\n";
    for (const auto& m : env.val)
        rules += nlohmann::json{{"match", "ext: \"" + m.text + "\""},
                                {"respond", pftest::tuple_of(m.label)}}
                     .dump() +
                 "\n";
    rules += nlohmann::json{{"fallback", "(\"Customer\", \"Refused Delivery\", \"Late Delivery\")"}}
                 .dump() +
             "\n";
    pftest::write_file(dir.file("combined.jsonl"), rules);

    env.target = std::make_unique<MockClient>(load_mock_rules(dir.file("combined.jsonl")),
                                              &fixture_taxonomy());
    env.optimizer = std::make_unique<MockClient>(load_mock_rules(dir.file("combined.jsonl")),
                                                 &fixture_taxonomy());

    OptimizerConfig cfg;
    cfg.rounds = 3;
    cfg.candidates_per_round = 3;

    SUBCASE("rounds=1 with an always-gold target: 3 perfect pairs") {
        OptimizerConfig one = cfg;
        one.rounds = 1;
        auto ctx = env.ctx();
        auto res = run_loop(one, ctx);
        REQUIRE(res.pairs.size() == 3);
        CHECK_FALSE(res.truncated);
        for (const auto& p : res.pairs) CHECK(p.report.exact_match == 1.0);
    }

    SUBCASE("rounds=3: nine pairs, monotone best-so-far, reproducible") {
        auto ctx = env.ctx();
        auto res = run_loop(cfg, ctx);
        REQUIRE(res.pairs.size() == 9);
        CHECK_FALSE(res.truncated);

        double best = -1.0;
        std::vector<double> best_after_round;
        for (int r = 1; r <= 3; ++r) {
            for (const auto& p : res.pairs)
                if (p.round == r) best = std::max(best, p.report.exact_match);
            best_after_round.push_back(best);
        }
        for (std::size_t i = 1; i < best_after_round.size(); ++i)
            CHECK(best_after_round[i] >= best_after_round[i - 1]);

        SolutionPair final = select_final(res.pairs, fixture_taxonomy(), library());
        for (const auto& p : res.pairs) CHECK(final.report.exact_match >= p.report.exact_match);

        // Reproducibility: a fresh context replays byte-identically.
        EvalEnv env2(150, 12);
        env2.target = std::make_unique<MockClient>(load_mock_rules(dir.file("combined.jsonl")),
                                                   &fixture_taxonomy());
        env2.optimizer = std::make_unique<MockClient>(load_mock_rules(dir.file("combined.jsonl")),
                                                      &fixture_taxonomy());
        auto ctx2 = env2.ctx();
        auto res2 = run_loop(cfg, ctx2);
        REQUIRE(res2.pairs.size() == res.pairs.size());
        for (std::size_t i = 0; i < res.pairs.size(); ++i) {
            CHECK(candidate_to_json(res.pairs[i].candidate).dump() ==
                  candidate_to_json(res2.pairs[i].candidate).dump());
            CHECK(report_to_json(res.pairs[i].report).dump() ==
                  report_to_json(res2.pairs[i].report).dump());
        }
    }

    SUBCASE("budget exhaustion truncates with the completed pairs") {
        auto rules_path = dir.file("combined.jsonl");
        MockClient raw_target(load_mock_rules(rules_path), &fixture_taxonomy());
        MockClient raw_opt(load_mock_rules(rules_path), &fixture_taxonomy());
        CallBudget budget(30);  // enough for 2 full evals of 12, then starves
        BudgetedClient bt(raw_target, budget);
        BudgetedClient bo(raw_opt, budget);
        auto ctx = env.ctx();
        ctx.target = &bt;
        ctx.optimizer = &bo;
        auto res = run_loop(cfg, ctx);
        CHECK(res.truncated);
        CHECK(res.pairs.size() == 2);
    }
}

TEST_CASE("select_final applies the documented total order") {
    auto mk = [&](const std::string& id, double exact, double validity, int round,
                  const std::string& instruction) {
        SolutionPair p;
        p.candidate = rag_candidate(0, id);
        p.candidate.instruction = instruction;
        p.round = round;
        p.report.exact_match = exact;
        p.report.validity_rate = validity;
        return p;
    };
    const std::string base_instr = library().get("base_instruction").body;

    SUBCASE("singleton") {
        auto only = mk("one", 0.5, 1.0, 1, base_instr);
        CHECK(select_final({only}, fixture_taxonomy(), library()).candidate.id == "one");
    }
    SUBCASE("equal scores: shorter rendered prompt wins") {
        auto longer = mk("long", 0.5, 1.0, 1,
                         base_instr + "\n\nAn extra clause making this prompt longer than needed.");
        auto shorter = mk("short", 0.5, 1.0, 1, base_instr);
        auto got = select_final({longer, shorter}, fixture_taxonomy(), library());
        CHECK(got.candidate.id == "short");
    }
    SUBCASE("validity breaks exact ties before length") {
        auto lo = mk("lo", 0.5, 0.8, 1, base_instr);
        auto hi = mk("hi", 0.5, 0.9, 1, base_instr + " longer");
        CHECK(select_final({lo, hi}, fixture_taxonomy(), library()).candidate.id == "hi");
    }
    SUBCASE("randomized pairs match an exhaustive comparison oracle") {
        std::mt19937_64 rng(2024);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<SolutionPair> pairs;
            for (int i = 0; i < 9; ++i) {
                double exact = (rng() % 5) / 4.0;
                double validity = (rng() % 5) / 4.0;
                int round = 1 + static_cast<int>(rng() % 3);
                std::string instr =
                    base_instr + std::string(rng() % 3, 'x');  // vary rendered length
                pairs.push_back(mk("p" + std::to_string(i), exact, validity, round, instr));
            }
            auto got = select_final(pairs, fixture_taxonomy(), library());
            // Oracle: scan all pairs, keep the best under the documented order.
            const SolutionPair* want = &pairs[0];
            for (const auto& p : pairs) {
                auto better = [&](const SolutionPair& a, const SolutionPair& b) {
                    if (a.report.exact_match != b.report.exact_match)
                        return a.report.exact_match > b.report.exact_match;
                    if (a.report.validity_rate != b.report.validity_rate)
                        return a.report.validity_rate > b.report.validity_rate;
                    int ta = probe_token_count(a.candidate, fixture_taxonomy(), library());
                    int tb = probe_token_count(b.candidate, fixture_taxonomy(), library());
                    if (ta != tb) return ta < tb;
                    if (a.round != b.round) return a.round < b.round;
                    return a.candidate.id < b.candidate.id;
                };
                if (better(p, *want)) want = &p;
            }
            CHECK(got.candidate.id == want->candidate.id);
        }
    }
    SUBCASE("empty list refused") {
        CHECK_THROWS_AS(select_final({}, fixture_taxonomy(), library()), ConfigError);
    }
}

TEST_CASE("report json round-trips and keeps aggregates consistent") {
    pftest::TempDir dir("repjson");
    EvalEnv env(60, 10);
    env.target = std::make_unique<MockClient>(
        load_mock_rules(write_wrong_cause_rules(dir, env.val)), &fixture_taxonomy());
    auto rep = evaluate_candidate(rag_candidate(3), env.ctx());

    auto j = report_to_json(rep);
    EvalReport back = report_from_json(j);
    CHECK(back.n() == rep.n());
    CHECK(back.exact_match == rep.exact_match);
    CHECK(report_to_json(back).dump() == j.dump());

    CHECK(rep.validity_rate <= rep.parse_rate);
    CHECK(rep.parse_rate <= 1.0);
}
