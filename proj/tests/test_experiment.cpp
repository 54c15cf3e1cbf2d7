#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ftnn/experiment.hpp"

using namespace ftnn;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an ftnn::Error");
  return ErrorKind::Input;
}

// Scratch directory per test case, removed on scope exit.
struct TempDir {
  fs::path root;
  explicit TempDir(const std::string& name)
      : root(fs::temp_directory_path() / ("ftnn_exp_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempDir() { fs::remove_all(root); }
  std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(static_cast<bool>(f));
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

nlohmann::json synth_corpus(std::uint64_t world, std::size_t sentences, std::uint64_t seed,
                            std::uint64_t salt = 0) {
  nlohmann::json synth = {{"world_seed", world}, {"lexicon", 120}, {"fan_out", 8}};
  if (salt != 0) synth["style_salt"] = salt;
  return {{"synth", synth}, {"sentences", sentences}, {"seed", seed}};
}

nlohmann::json tiny_sgd(double lr) {
  return {{"learning_rate", lr}, {"momentum", 0.9}, {"clip_norm", 5.0}, {"minibatch", 8}};
}

// A complete small lm_finetune config; the checkpoint path is patched in by
// the caller once the output directory is known.
nlohmann::json tiny_lm_config(std::uint64_t seed, const std::string& ckpt) {
  return {
      {"scenario", "lm_finetune"},
      {"seed", seed},
      {"model", {{"embed", 10}, {"hidden", {14}}, {"dropout", 0.0}, {"bptt", 8}}},
      {"data",
       {{"vocab_size", 130},
        {"general_train", synth_corpus(5, 700, 101)},
        {"general_test", synth_corpus(5, 50, 102)},
        {"user_train", synth_corpus(5, 400, 103, 3)},
        {"user_test", synth_corpus(5, 50, 104, 3)}}},
      {"pretrain", {{"epochs", 1}, {"sgd", tiny_sgd(0.4)}}},
      {"finetune",
       {{"base_checkpoint", ckpt},
        {"rounds", 2},
        {"node_policy", "single_use"},
        {"shards", {{"count", 6}, {"tokens", 120}}},
        {"client",
         {{"method", "rehearsal"},
          {"lambda", 0.5},
          {"epochs", 1},
          {"rehearsal_block", 10},
          {"sgd", tiny_sgd(0.3)}}},
        {"aggregation", {{"mode", "average"}, {"clients_per_round", 2}}}}},
      {"kss", {{"list_size", 3}}}};
}

nlohmann::json tiny_image_config(std::uint64_t seed, const std::string& ckpt) {
  const nlohmann::json synth = {
      {"world_seed", 4}, {"rows", 4}, {"cols", 4}, {"classes", 3}, {"noise", 0.15}};
  return {{"scenario", "mnist_permuted"},
          {"seed", seed},
          {"model", {{"widths", {16, 12, 3}}}},
          {"data",
           {{"train", {{"synth", synth}, {"count", 90}, {"seed", 301}}},
            {"test", {{"synth", synth}, {"count", 45}, {"seed", 302}}},
            {"permute_seed", 77}}},
          {"pretrain", {{"epochs", 4}, {"sgd", tiny_sgd(0.1)}}},
          {"finetune",
           {{"base_checkpoint", ckpt},
            {"rounds", 2},
            {"shards", {{"count", 4}, {"per_node", 20}}},
            {"client", {{"method", "rehearsal"}, {"lambda", 0.5}, {"sgd", tiny_sgd(0.1)}}},
            {"aggregation", {{"mode", "average"}, {"clients_per_round", 2}}}}}};
}

nlohmann::json tiny_audit_config(std::uint64_t seed, const std::string& ckpt,
                                 const std::string& adjacency = "remove") {
  return {{"scenario", "dp_audit"},
          {"seed", seed},
          {"model", {{"embed", 8}, {"hidden", {12}}, {"dropout", 0.0}, {"bptt", 6}}},
          {"data",
           {{"vocab_size", 100},
            {"general_train", synth_corpus(6, 600, 201)},
            {"general_test", synth_corpus(6, 40, 202)},
            {"user_train", synth_corpus(6, 500, 203, 2)},
            {"user_test", synth_corpus(6, 40, 204, 2)}}},
          {"pretrain", {{"epochs", 1}, {"sgd", tiny_sgd(0.4)}}},
          {"audit",
           {{"base_checkpoint", ckpt},
            {"pairs", 2},
            {"samples", 150},
            {"seq_len", 4},
            {"deltas", {1e-4, 1e-5}},
            {"adjacency", adjacency},
            {"subset", 4},
            {"shards", {{"count", 9}, {"tokens", 100}}},
            {"rounds", 1},
            {"client", {{"method", "plain"}, {"epochs", 1}, {"sgd", tiny_sgd(0.3)}}},
            {"aggregation", {{"mode", "average"}, {"clients_per_round", 2}}}}}};
}

nlohmann::json run_verb(Command cmd, const nlohmann::json& cfg, const TempDir& dir,
                        const std::string& out_name) {
  const std::string cfg_path = dir / (out_name + "_config.json");
  write_file(cfg_path, cfg.dump(2));
  return run_command(cmd, cfg_path, dir / out_name);
}

}  // namespace

TEST_CASE("configs are parsed strictly", "[experiment]") {
  nlohmann::json good = tiny_lm_config(1, "unused.ckpt");
  REQUIRE(parse_experiment_config(good).scenario == Scenario::lm_finetune);

  SECTION("unknown keys fail at every level") {
    auto j = good;
    j["surprise"] = 1;
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = good;
    j["model"]["hidden_units"] = 4;
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = good;
    j["finetune"]["client"]["sgd"]["lr"] = 0.1;
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
  }

  SECTION("required keys and types are enforced") {
    auto j = good;
    j.erase("seed");  // seeds must be explicit
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = good;
    j["seed"] = "tuesday";
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = good;
    j["data"]["general_train"].erase("synth");  // neither file nor synth
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = good;
    j["data"]["user_test"]["file"] = "extra.txt";  // both at once
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = good;
    j["scenario"] = "lm_fine_tune";
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
  }

  SECTION("optional blocks may be absent") {
    auto j = good;
    j.erase("finetune");
    j.erase("kss");
    const ExperimentConfig cfg = parse_experiment_config(j);
    REQUIRE(cfg.has_pretrain);
    REQUIRE_FALSE(cfg.has_finetune);
    REQUIRE(cfg.kss.list_size == 3);
  }

  SECTION("audit constraints are checked at parse time") {
    auto j = tiny_audit_config(1, "unused.ckpt");
    j["audit"]["subset"] = 20;  // larger than the 9 shards
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = tiny_audit_config(1, "unused.ckpt", "replace");
    j["audit"]["subset"] = 9;  // replacement needs a spare shard outside
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
    j = tiny_audit_config(1, "unused.ckpt");
    j["audit"]["adjacency"] = "swap";
    REQUIRE(error_kind_of([&] { parse_experiment_config(j); }) == ErrorKind::Config);
  }
}

TEST_CASE("corpus specs materialize deterministically", "[experiment]") {
  CorpusSpec spec;
  spec.use_synth = true;
  spec.synth.lexicon = 120;
  spec.synth.fan_out = 8;
  spec.sentences = 300;
  spec.seed = 9;

  const auto full = corpus_sentences(spec);
  REQUIRE(full.size() == 300);
  REQUIRE(corpus_sentences(spec) == full);

  SECTION("sampling picks an ordered subset of fixed size") {
    auto sampled_spec = spec;
    sampled_spec.sample_sentences = 40;
    sampled_spec.sample_seed = 5;
    const auto sampled = corpus_sentences(sampled_spec);
    REQUIRE(sampled.size() == 40);
    REQUIRE(corpus_sentences(sampled_spec) == sampled);
    // every sampled sentence appears in the full corpus, in reading order
    std::size_t cursor = 0;
    for (const auto& s : sampled) {
      while (cursor < full.size() && full[cursor] != s) ++cursor;
      REQUIRE(cursor < full.size());
      ++cursor;
    }
    sampled_spec.sample_seed = 6;
    REQUIRE_FALSE(corpus_sentences(sampled_spec) == sampled);
    sampled_spec.sample_sentences = 400;
    REQUIRE(error_kind_of([&] { corpus_sentences(sampled_spec); }) == ErrorKind::Input);
  }

  SECTION("file sources round-trip through disk") {
    TempDir dir("corpus_file");
    std::string text;
    for (const auto& s : full) {
      for (std::size_t i = 0; i < s.size(); ++i) text += (i ? " " : "") + s[i];
      text += "\n";
    }
    write_file(dir / "c.txt", text);
    CorpusSpec file_spec;
    file_spec.file = dir / "c.txt";
    REQUIRE(corpus_sentences(file_spec) == full);
  }
}

TEST_CASE("model parameter arithmetic matches the real layout", "[experiment]") {
  for (const auto& [vocab, embed, hidden] :
       {std::tuple<std::size_t, std::size_t, std::vector<std::size_t>>{57, 12, {20}},
        {130, 16, {24, 24}},
        {80, 8, {10, 14, 6}}}) {
    LmConfig mc;
    mc.vocab = vocab;
    mc.embed_width = embed;
    mc.hidden_widths = hidden;
    REQUIRE(detail::lm_param_count(mc) == RecurrentLM(mc).parameters().size());
  }
}

TEST_CASE("comm report reproduces the published upload arithmetic", "[experiment]") {
  TempDir dir("comm");
  const nlohmann::json cfg = {{"scenario", "comm_report"},
                              {"seed", 1},
                              {"comm",
                               {{"param_count", 45700000},
                                {"clients_per_round", 10},
                                {"rounds", 300},
                                {"bytes_per_param", 4}}}};
  const auto summary = run_verb(Command::comm_report, cfg, dir, "out");
  REQUIRE(summary.at("model_mib").get<double>() == Catch::Approx(174.43).epsilon(0.005));
  REQUIRE(summary.at("round_gib").get<double>() == Catch::Approx(1.70).epsilon(0.005));
  REQUIRE(summary.at("cumulative_bytes").get<std::uint64_t>() ==
          300ull * summary.at("round_bytes").get<std::uint64_t>());
  REQUIRE(summary.at("upload_events").get<std::uint64_t>() == 3000);
  REQUIRE(summary.at("literature_reference").size() == 2);
  for (const auto& row : summary.at("literature_reference")) {
    REQUIRE(row.at("source") == "literature");
  }
  REQUIRE(fs::exists(dir / "out/manifest.json"));

  SECTION("a derived model shape is accepted instead of a raw count") {
    nlohmann::json derived = cfg;
    derived["comm"].erase("param_count");
    derived["comm"]["model"] = {{"vocab", 130}, {"embed", 16}, {"hidden", {24, 24}}};
    const auto s2 = run_verb(Command::comm_report, derived, dir, "out2");
    LmConfig mc;
    mc.vocab = 130;
    mc.embed_width = 16;
    mc.hidden_widths = {24, 24};
    REQUIRE(s2.at("parameters").get<std::uint64_t>() == detail::lm_param_count(mc));
  }
}

TEST_CASE("zero-epoch pretraining checkpoints the initialization", "[experiment]") {
  TempDir dir("zero_epoch");
  auto cfg = tiny_lm_config(42, "unused.ckpt");
  cfg["pretrain"]["epochs"] = 0;
  const auto summary = run_verb(Command::pretrain, cfg, dir, "pre");

  // Rebuild the same initialization independently and compare bitwise.
  const ExperimentConfig parsed = parse_experiment_config(cfg);
  const LmBundle data = load_lm_bundle(parsed.lm_data);
  LmConfig mc = parsed.lm_model;
  mc.vocab = data.vocab->size();
  RecurrentLM expected(mc);
  Rng init(derive_seed(42, "init"));
  expected.init_weights(init);

  RecurrentLM loaded(mc);
  load_checkpoint_into(loaded.parameters(), dir / "pre/base.ckpt");
  REQUIRE(std::equal(loaded.parameters().values().begin(), loaded.parameters().values().end(),
                     expected.parameters().values().begin()));
  REQUIRE(summary.at("general_ppl").get<double>() ==
          perplexity(expected, data.general_test));
}

TEST_CASE("zero rounds of fine-tuning keep the base model", "[experiment]") {
  TempDir dir("zero_rounds");
  auto cfg = tiny_lm_config(7, dir / "pre/base.ckpt");
  run_verb(Command::pretrain, cfg, dir, "pre");
  cfg["finetune"]["rounds"] = 0;
  const auto summary = run_verb(Command::finetune, cfg, dir, "fin");
  REQUIRE(summary.at("initial") == summary.at("final"));
  REQUIRE(summary.at("cumulative_uploaded_bytes").get<std::uint64_t>() == 0);
  // the final checkpoint is byte-identical to the base
  REQUIRE(read_file(dir / "fin/final.ckpt") == read_file(dir / "pre/base.ckpt"));
  // rounds.csv holds just the header and the initial row
  const std::string csv = read_file(dir / "fin/rounds.csv");
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("commands rerun bitwise under a fixed seed", "[experiment]") {
  TempDir dir("rerun");
  auto cfg = tiny_lm_config(11, dir / "pre/base.ckpt");
  run_verb(Command::pretrain, cfg, dir, "pre");

  run_verb(Command::finetune, cfg, dir, "fin_a");
  run_verb(Command::finetune, cfg, dir, "fin_b");
  REQUIRE(read_file(dir / "fin_a/manifest.json") == read_file(dir / "fin_b/manifest.json"));
  REQUIRE(read_file(dir / "fin_a/rounds.csv") == read_file(dir / "fin_b/rounds.csv"));

  SECTION("the seed override changes results without touching the data") {
    const std::string cfg_path = dir / "override_config.json";
    write_file(cfg_path, cfg.dump(2));
    run_command(Command::finetune, cfg_path, dir / "fin_c", 12);
    REQUIRE(read_file(dir / "fin_a/rounds.csv") != read_file(dir / "fin_c/rounds.csv"));
    // same shards file name, different node draws: training data identity is
    // set by the data block, so the shard manifest only depends on run seed
    // through the shard shuffle
    REQUIRE(fs::exists(dir / "fin_c/shards.json"));
  }

  SECTION("thread count does not change results") {
    const std::string cfg_path = dir / "threads_config.json";
    write_file(cfg_path, cfg.dump(2));
    run_command(Command::finetune, cfg_path, dir / "fin_t", {}, 3);
    REQUIRE(read_file(dir / "fin_a/rounds.csv") == read_file(dir / "fin_t/rounds.csv"));
  }
}

TEST_CASE("checkpoints are shape-checked on load", "[experiment]") {
  TempDir dir("ckpt_shape");
  auto cfg = tiny_lm_config(3, dir / "pre/base.ckpt");
  run_verb(Command::pretrain, cfg, dir, "pre");
  auto wrong = cfg;
  wrong["model"]["hidden"] = {15};  // different width than the checkpoint
  REQUIRE(error_kind_of([&] { run_verb(Command::finetune, wrong, dir, "fin"); }) ==
          ErrorKind::Layout);
  auto missing = cfg;
  missing["finetune"]["base_checkpoint"] = dir / "nowhere.ckpt";
  REQUIRE(error_kind_of([&] { run_verb(Command::finetune, missing, dir, "fin2"); }) ==
          ErrorKind::Io);
}

TEST_CASE("verbs demand a matching scenario", "[experiment]") {
  TempDir dir("verbs");
  const nlohmann::json comm = {{"scenario", "comm_report"},
                               {"seed", 1},
                               {"comm",
                                {{"param_count", 1000},
                                 {"clients_per_round", 2},
                                 {"rounds", 3}}}};
  REQUIRE(error_kind_of([&] { run_verb(Command::pretrain, comm, dir, "a"); }) ==
          ErrorKind::Config);
  REQUIRE(error_kind_of([&] { run_verb(Command::finetune, comm, dir, "b"); }) ==
          ErrorKind::Config);
  REQUIRE(error_kind_of([&] { run_verb(Command::dp_audit, comm, dir, "c"); }) ==
          ErrorKind::Config);
  const nlohmann::json lm = tiny_lm_config(1, "unused.ckpt");
  REQUIRE(error_kind_of([&] { run_verb(Command::comm_report, lm, dir, "d"); }) ==
          ErrorKind::Config);
  REQUIRE(error_kind_of([&] { run_verb(Command::dp_audit, lm, dir, "e"); }) ==
          ErrorKind::Config);
  REQUIRE(error_kind_of(
              [&] { run_command(Command::pretrain, dir / "missing.json", dir / "f"); }) ==
          ErrorKind::Io);
  write_file(dir / "broken.json", "{not json");
  REQUIRE(error_kind_of(
              [&] { run_command(Command::pretrain, dir / "broken.json", dir / "g"); }) ==
          ErrorKind::Config);
}

TEST_CASE("the audit emits a reproducible report with pair descriptors", "[experiment]") {
  TempDir dir("audit");
  auto cfg = tiny_audit_config(19, dir / "pre/base.ckpt");
  run_verb(Command::pretrain, cfg, dir, "pre");
  const auto summary = run_verb(Command::dp_audit, cfg, dir, "aud");

  REQUIRE(summary.at("pairs").get<std::size_t>() == 2);
  REQUIRE(fs::exists(dir / "aud/report.json"));
  REQUIRE(fs::exists(dir / "aud/ratios_pair-1.csv"));
  REQUIRE(fs::exists(dir / "aud/ratios_pair-2.csv"));

  const auto pairs = nlohmann::json::parse(read_file(dir / "aud/pairs.json"));
  REQUIRE(pairs.size() == 2);
  for (const auto& p : pairs) {
    REQUIRE(p.at("shards").size() == 4);
    REQUIRE(p.at("added").is_null());
    // the removed shard is a member of the with-side subset
    const auto& shards = p.at("shards");
    REQUIRE(std::find(shards.begin(), shards.end(), p.at("removed")) != shards.end());
  }

  run_verb(Command::dp_audit, cfg, dir, "aud2");
  REQUIRE(read_file(dir / "aud/report.json") == read_file(dir / "aud2/report.json"));
  REQUIRE(read_file(dir / "aud/manifest.json") == read_file(dir / "aud2/manifest.json"));

  SECTION("replacement adjacency swaps in an outside shard") {
    auto rep = tiny_audit_config(19, dir / "pre/base.ckpt", "replace");
    const auto s2 = run_verb(Command::dp_audit, rep, dir, "aud3");
    const auto rp = nlohmann::json::parse(read_file(dir / "aud3/pairs.json"));
    for (const auto& p : rp) {
      REQUIRE_FALSE(p.at("added").is_null());
      const auto& shards = p.at("shards");
      REQUIRE(std::find(shards.begin(), shards.end(), p.at("added")) == shards.end());
    }
  }

  SECTION("subsets must keep a full round of clients after removal") {
    auto small = tiny_audit_config(19, dir / "pre/base.ckpt");
    small["audit"]["subset"] = 2;  // removal leaves 1 < clients_per_round
    REQUIRE(error_kind_of([&] { run_verb(Command::dp_audit, small, dir, "aud4"); }) ==
            ErrorKind::Config);
  }
}

TEST_CASE("the image scenario fine-tunes on the permuted task", "[experiment]") {
  TempDir dir("image");
  auto cfg = tiny_image_config(23, dir / "pre/base.ckpt");
  const auto pre = run_verb(Command::pretrain, cfg, dir, "pre");
  REQUIRE(pre.at("test_acc").get<double>() > 34.0);  // better than chance

  const auto summary = run_verb(Command::finetune, cfg, dir, "fin");
  REQUIRE(summary.at("initial").at("old_acc").get<double>() ==
          pre.at("test_acc").get<double>());
  REQUIRE(summary.at("final").at("new_acc").get<double>() >=
          summary.at("initial").at("new_acc").get<double>());
  REQUIRE(fs::exists(dir / "fin/rounds.csv"));
  REQUIRE(fs::exists(dir / "fin/shards.json"));

  run_verb(Command::finetune, cfg, dir, "fin2");
  REQUIRE(read_file(dir / "fin/manifest.json") == read_file(dir / "fin2/manifest.json"));
}
