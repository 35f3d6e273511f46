#include "flowctl/runconfig.hpp"

#include "flowctl/checkpoint.hpp"
#include "flowctl/dataset_io.hpp"
#include "flowctl/eval.hpp"
#include "flowctl/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace flowctl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kVersion[] = "0.1.0";

using Clock = std::chrono::steady_clock;

}  // namespace

nlohmann::json default_config_json() {
  return json{
      {"seed", 17},
      {"out", "out"},
      {"data",
       {{"utterances", 768},
        {"holdout", 96},
        {"min_tokens", 8},
        {"max_tokens", 16},
        {"max_segments", 3},
        {"noise_std", 0.0},
        {"speakers", 16},
        {"speaker_id_base", 0},
        {"holdout_speaker_id_base", 1000},
        {"codebook_seed", 1234},
        {"speaker_table_seed", 99}}},
      {"model",
       {{"F", 16},
        {"D", 64},
        {"B", 8},
        {"heads", 1},
        {"mlp_ratio", 4},
        {"V", 16},
        {"L", 4},
        {"max_T", 128}}},
      {"train",
       {{"steps", 2000},
        {"batch_frames", 2048},
        {"learning_rate", 1e-3},
        {"log_every", 50},
        {"mask_ratio_lo", 0.7},
        {"mask_ratio_hi", 1.0},
        {"threads", 0}}},
      {"ctrl",
       {{"blocks", json::array()},  // empty selects every block
        {"t_emo", 0.3},
        {"lambda", 1.0},
        {"window", 8}}},
      {"schedule", {{"nfe", 32}, {"lambda", 1.0}}},
      {"paths",
       {{"dataset", "out/train.fcds"},
        {"holdout", "out/holdout.fcds"},
        {"base", "out/base.fccp"},
        {"ctrl", "out/ctrl.fccp"}}},
      {"eval",
       {{"cases_per_pair", 8},
        {"speaker_id_base", 2000},
        {"tokens_per_half", 8},
        {"scan_cases", 16},
        {"flow_samples", 8},
        {"flow_draws", 4},
        {"flow_tau", 0.9},
        {"lambda_grid", {0.0, 0.1, 0.3, 0.5, 1.0}},
        {"ablate_kind", "interval"},
        {"timing_runs", 20}}},
  };
}

namespace {

bool same_json_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge_checked(json& dst, const json& src, const std::string& prefix,
                   std::map<std::string, std::string>& provenance, const std::string& origin) {
  if (!src.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), path, provenance, origin);
      continue;
    }
    if (!same_json_kind(slot, it.value())) {
      throw ConfigError("config key '" + path + "' has the wrong type");
    }
    slot = it.value();
    provenance[path] = origin;
  }
}

void collect_leaves(const json& j, const std::string& prefix,
                    std::map<std::string, std::string>& provenance) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) {
      collect_leaves(it.value(), path, provenance);
    } else {
      provenance.emplace(path, "default");
    }
  }
}

void check_constraints(const json& v) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("config constraint violated for '" + key + "': " + why);
  };
  double t_emo = v["ctrl"]["t_emo"].get<double>();
  if (!(t_emo > 0.0 && t_emo <= 1.0)) fail("ctrl.t_emo", "must lie in (0, 1]");
  if (v["ctrl"]["lambda"].get<double>() < 0.0) fail("ctrl.lambda", "must be >= 0");
  if (v["ctrl"]["window"].get<int>() < 1) fail("ctrl.window", "must be >= 1");
  if (v["eval"]["flow_draws"].get<int>() < 4) fail("eval.flow_draws", "must be >= 4");
  if (v["schedule"]["nfe"].get<int>() < 1) fail("schedule.nfe", "must be >= 1");
  if (v["schedule"]["lambda"].get<double>() < 0.0) fail("schedule.lambda", "must be >= 0");
  if (v["train"]["steps"].get<int>() < 1) fail("train.steps", "must be >= 1");
  if (v["train"]["learning_rate"].get<double>() <= 0.0) fail("train.learning_rate", "must be > 0");
  if (v["train"]["batch_frames"].get<int>() < 1) fail("train.batch_frames", "must be >= 1");
  double lo = v["train"]["mask_ratio_lo"].get<double>();
  double hi = v["train"]["mask_ratio_hi"].get<double>();
  if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) fail("train.mask_ratio_lo", "need 0 < lo <= hi <= 1");
  if (v["data"]["noise_std"].get<double>() < 0.0) fail("data.noise_std", "must be >= 0");
  if (v["data"]["utterances"].get<int>() < 1) fail("data.utterances", "must be >= 1");
  if (v["data"]["min_tokens"].get<int>() < 1) fail("data.min_tokens", "must be >= 1");
  if (v["data"]["max_tokens"].get<int>() < v["data"]["min_tokens"].get<int>()) {
    fail("data.max_tokens", "must be >= data.min_tokens");
  }
  try {
    ModelConfig mc;
    mc.F = v["model"]["F"].get<int>();
    mc.D = v["model"]["D"].get<int>();
    mc.B = v["model"]["B"].get<int>();
    mc.heads = v["model"]["heads"].get<int>();
    mc.mlp_ratio = v["model"]["mlp_ratio"].get<int>();
    mc.V = v["model"]["V"].get<int>();
    mc.L = v["model"]["L"].get<int>();
    mc.max_T = v["model"]["max_T"].get<int>();
    mc.validate();
    if (mc.F % 4 != 0) fail("model.F", "must be a multiple of 4");
  } catch (const std::invalid_argument& e) {
    fail("model", e.what());
  }
  const std::string kind = v["eval"]["ablate_kind"].get<std::string>();
  if (kind != "interval" && kind != "window" && kind != "selective") {
    fail("eval.ablate_kind", "must be one of interval|window|selective");
  }
  for (int b : v["ctrl"]["blocks"].get<std::vector<int>>()) {
    if (b < 0 || b >= v["model"]["B"].get<int>()) fail("ctrl.blocks", "block index out of range");
  }
}

}  // namespace

RunConfig parse_config(const std::string& file_path,
                       const std::map<std::string, nlohmann::json>& flag_overrides) {
  RunConfig cfg;
  cfg.values = default_config_json();
  collect_leaves(cfg.values, "", cfg.provenance);

  if (!file_path.empty()) {
    std::ifstream f(file_path);
    if (!f) throw ConfigError("cannot open config file: " + file_path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    json file_json = json::object();
    // An empty (or whitespace-only) file selects every default.
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      try {
        file_json = json::parse(text);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
      }
      if (file_json.is_null()) file_json = json::object();
    }
    merge_checked(cfg.values, file_json, "", cfg.provenance, "file");
  }
  for (const auto& [path, value] : flag_overrides) {
    json patch = value;
    // Build the nested object for this dotted path, then run it through the
    // same checked merge as file values.
    size_t pos;
    std::string rest = path;
    std::vector<std::string> parts;
    while ((pos = rest.find('.')) != std::string::npos) {
      parts.push_back(rest.substr(0, pos));
      rest = rest.substr(pos + 1);
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_checked(cfg.values, patch, "", cfg.provenance, "flag");
  }
  check_constraints(cfg.values);
  return cfg;
}

// ---------------------------------------------------------------------------
// Dispatch helpers

namespace {

ModelConfig model_cfg_of(const json& v) { return model_config_from_json(v.at("model")); }

CtrlConfig ctrl_cfg_of(const json& v) {
  CtrlConfig c;
  c.blocks = v["ctrl"]["blocks"].get<std::vector<int>>();
  if (c.blocks.empty()) c.blocks = CtrlConfig::all_blocks(v["model"]["B"].get<int>());
  c.t_emo = v["ctrl"]["t_emo"].get<double>();
  c.lambda_default = v["ctrl"]["lambda"].get<double>();
  c.emo_window = v["ctrl"]["window"].get<int>();
  return c;
}

TrainConfig train_cfg_of(const json& v, TrainConfig::Phase phase) {
  TrainConfig t;
  t.phase = phase;
  t.steps = v["train"]["steps"].get<int>();
  t.batch_frames = v["train"]["batch_frames"].get<int>();
  t.learning_rate = v["train"]["learning_rate"].get<double>();
  t.log_every = v["train"]["log_every"].get<int>();
  t.mask_ratio_lo = v["train"]["mask_ratio_lo"].get<double>();
  t.mask_ratio_hi = v["train"]["mask_ratio_hi"].get<double>();
  t.threads = v["train"]["threads"].get<int>();
  t.seed = v["seed"].get<uint64_t>();
  return t;
}

BenchmarkParams benchmark_params_of(const json& v) {
  BenchmarkParams p;
  p.speaker_count = v["eval"]["cases_per_pair"].get<int>();
  p.speaker_id_base = v["eval"]["speaker_id_base"].get<uint32_t>();
  p.tokens_per_half = v["eval"]["tokens_per_half"].get<int>();
  p.speaker_table_seed = v["data"]["speaker_table_seed"].get<uint64_t>();
  return p;
}

fs::path out_path(const RunConfig& cfg, const std::string& name) {
  return fs::path(cfg.values["out"].get<std::string>()) / name;
}

void write_manifest(const RunConfig& cfg, const std::string& command, double wall_ms) {
  json manifest{{"command", command},
                {"seed", cfg.values["seed"]},
                {"config", cfg.values},
                {"provenance", cfg.provenance},
                {"versions",
                 {{"flowctl", kVersion}, {"dataset_format", "FCDS1"}, {"checkpoint_format", "FCCP1"}}},
                {"wall_ms", wall_ms}};
  atomic_write_file(out_path(cfg, "run.json").string(), manifest.dump(2) + "\n");
}

Dataset build_corpus(const RunConfig& cfg, uint64_t seed, int count, uint32_t speaker_id_base) {
  const json& v = cfg.values;
  CorpusParams p;
  p.count = count;
  p.min_tokens = v["data"]["min_tokens"].get<int>();
  p.max_tokens = v["data"]["max_tokens"].get<int>();
  p.max_segments = v["data"]["max_segments"].get<int>();
  p.noise_std = v["data"]["noise_std"].get<float>();
  p.vocab = v["model"]["V"].get<int>();
  p.frames_per_token = v["model"]["L"].get<int>();
  p.speaker_id_base = speaker_id_base;
  p.speakers = v["data"]["speakers"].get<int>();

  const uint64_t table_seed = v["data"]["speaker_table_seed"].get<uint64_t>();
  const uint64_t cb_seed = v["data"]["codebook_seed"].get<uint64_t>();
  Codebook cb = make_codebook(v["model"]["F"].get<int>() / 2, p.vocab, cb_seed);

  std::vector<UtteranceSpec> specs = make_corpus_specs(p, seed);
  Dataset ds;
  ds.utterances.resize(specs.size());
  parallel_for(specs.size(), [&](size_t i) {
    ds.utterances[i] = gen_utterance(specs[i], cb, table_seed, derive_seed(seed, 0x6e7au, i + 1),
                                     p.frames_per_token);
  });
  ds.header = json{{"F", v["model"]["F"]},
                   {"V", p.vocab},
                   {"L", p.frames_per_token},
                   {"codebook_seed", cb_seed},
                   {"speaker_table_seed", table_seed},
                   {"noise_std", p.noise_std},
                   {"seed", seed},
                   {"speaker_id_base", speaker_id_base},
                   {"speakers", p.speakers}};
  return ds;
}

int cmd_gen_data(const RunConfig& cfg) {
  const json& v = cfg.values;
  uint64_t seed = v["seed"].get<uint64_t>();
  Dataset train = build_corpus(cfg, seed, v["data"]["utterances"].get<int>(),
                               v["data"]["speaker_id_base"].get<uint32_t>());
  save_dataset(v["paths"]["dataset"].get<std::string>(), train);
  Dataset holdout = build_corpus(cfg, derive_seed(seed, 0x686f6cull), v["data"]["holdout"].get<int>(),
                                 v["data"]["holdout_speaker_id_base"].get<uint32_t>());
  save_dataset(v["paths"]["holdout"].get<std::string>(), holdout);
  std::cout << "wrote " << train.utterances.size() << " train and " << holdout.utterances.size()
            << " holdout utterances\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  const json& v = cfg.values;
  Dataset ds = load_dataset(v["paths"]["dataset"].get<std::string>());
  TrainConfig tc = train_cfg_of(v, TrainConfig::Phase::base);
  PretrainResult result = pretrain_base(ds.utterances, tc, model_cfg_of(v));
  json meta{{"learning_rate", tc.learning_rate},
            {"full_scale_reference_lr", 1e-5},
            {"steps", tc.steps},
            {"seed", tc.seed}};
  save_base_checkpoint(v["paths"]["base"].get<std::string>(), result.params, {{"train_meta", meta}});
  atomic_write_file(out_path(cfg, "pretrain_log.csv").string(), result.log.to_csv());
  std::cout << "pretrained base: final loss " << result.log.records.back().loss << "\n";
  return 0;
}

int cmd_train_ctrlnet(const RunConfig& cfg) {
  const json& v = cfg.values;
  Dataset ds = load_dataset(v["paths"]["dataset"].get<std::string>());
  BaseParams base = load_base_checkpoint(v["paths"]["base"].get<std::string>());
  CtrlConfig cc = ctrl_cfg_of(v);
  TrainConfig tc = train_cfg_of(v, TrainConfig::Phase::ctrlnet);
  tc.flow_interval = {0.0, cc.t_emo};
  CtrlTrainResult result = train_ctrlnet(ds.utterances, base, cc, tc);
  json meta{{"learning_rate", tc.learning_rate},
            {"full_scale_reference_lr", 1e-5},
            {"steps", tc.steps},
            {"seed", tc.seed}};
  save_ctrl_checkpoint(v["paths"]["ctrl"].get<std::string>(), result.params, {{"train_meta", meta}});
  atomic_write_file(out_path(cfg, "ctrlnet_log.csv").string(), result.log.to_csv());
  std::cout << "trained control branch: final loss " << result.log.records.back().loss << "\n";
  return 0;
}

struct LoadedModels {
  BaseParams base;
  std::unique_ptr<CtrlParams> ctrl;
};

LoadedModels load_models(const json& v, bool want_ctrl) {
  LoadedModels m{load_base_checkpoint(v["paths"]["base"].get<std::string>()), nullptr};
  const std::string ctrl_path = v["paths"]["ctrl"].get<std::string>();
  if (want_ctrl && fs::exists(ctrl_path)) {
    m.ctrl = std::make_unique<CtrlParams>(load_ctrl_checkpoint(ctrl_path, m.base));
  }
  return m;
}

SampleSchedule schedule_of(const json& v, const CtrlParams* ctrl) {
  SampleSchedule s;
  s.nfe = v["schedule"]["nfe"].get<int>();
  s.lambda = v["schedule"]["lambda"].get<double>();
  s.interval = {0.0, ctrl ? ctrl->cfg.t_emo : 1.0};
  return s;
}

int cmd_synth(const RunConfig& cfg) {
  const json& v = cfg.values;
  LoadedModels m = load_models(v, true);
  Codebook cb = make_codebook(v["model"]["F"].get<int>() / 2, v["model"]["V"].get<int>(),
                              v["data"]["codebook_seed"].get<uint64_t>());
  std::vector<EvalCase> cases = make_benchmark(cb, benchmark_params_of(v), v["seed"].get<uint64_t>());
  const EvalCase& c = cases[v["seed"].get<uint64_t>() % cases.size()];
  SampleSchedule sched = schedule_of(v, m.ctrl.get());
  CaseMetrics cm = evaluate_case(m.base, m.ctrl.get(), c, sched, cb,
                                 derive_seed(v["seed"].get<uint64_t>(), 0x73796e));

  // Persist the generated region as a one-record dataset for inspection.
  Rng rng(derive_seed(v["seed"].get<uint64_t>(), 0x73796e));
  EmotionTrack emotion_full(2, c.ref_track.cols() + c.gen_track.cols());
  emotion_full << c.ref_track, c.gen_track;
  if (m.ctrl) emotion_full = window_interpolate(emotion_full, m.ctrl->cfg.emo_window);
  FeatureMatrix gen = synthesize(m.base, m.ctrl.get(), c.ref_features, c.ref_tokens,
                                 c.target_tokens, emotion_full, sched, rng);
  Dataset out_ds;
  out_ds.header = json{{"F", v["model"]["F"]},
                       {"V", v["model"]["V"]},
                       {"L", v["model"]["L"]},
                       {"codebook_seed", v["data"]["codebook_seed"]},
                       {"speaker_table_seed", v["data"]["speaker_table_seed"]},
                       {"noise_std", 0.0},
                       {"seed", v["seed"]},
                       {"speaker_id_base", c.speaker_id},
                       {"speakers", 1}};
  SynthUtterance record;
  record.features = gen;
  record.emotion = extract_emotion(gen, 1);
  record.spec.tokens = c.target_tokens;
  record.spec.segments = {{static_cast<int>(gen.cols()), 0.f, 0.f}};
  record.spec.speaker_id = c.speaker_id;
  record.spec.noise_std = 0.f;
  out_ds.utterances.push_back(std::move(record));
  save_dataset(out_path(cfg, "synth.fcds").string(), out_ds);

  std::vector<ExperimentRecord> rows{{c.tag, cm.ter, cm.spk_sim, cm.emo_sim, cm.av_cos, cm.wall_ms}};
  atomic_write_file(out_path(cfg, "synth.csv").string(), records_to_csv(rows));
  std::cout << "synthesized " << c.tag << ": ter " << cm.ter << " emo_sim " << cm.emo_sim << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const json& v = cfg.values;
  LoadedModels m = load_models(v, true);
  Codebook cb = make_codebook(v["model"]["F"].get<int>() / 2, v["model"]["V"].get<int>(),
                              v["data"]["codebook_seed"].get<uint64_t>());
  std::vector<EvalCase> cases = make_benchmark(cb, benchmark_params_of(v), v["seed"].get<uint64_t>());
  SampleSchedule sched = schedule_of(v, m.ctrl.get());
  const uint64_t seed = v["seed"].get<uint64_t>();

  std::vector<ExperimentRecord> rows(cases.size());
  parallel_for(
      cases.size(),
      [&](size_t i) {
        CaseMetrics cm = evaluate_case(m.base, m.ctrl.get(), cases[i], sched, cb,
                                       derive_seed(seed, 0x63617365ull, i + 1));
        rows[i] = {cases[i].tag, cm.ter, cm.spk_sim, cm.emo_sim, cm.av_cos, cm.wall_ms};
      },
      v["train"]["threads"].get<int>());
  ExperimentRecord mean;
  mean.config_tag = "mean";
  for (const auto& r : rows) {
    mean.ter += r.ter;
    mean.spk_sim += r.spk_sim;
    mean.emo_sim += r.emo_sim;
    mean.av_cos += r.av_cos;
    mean.wall_ms += r.wall_ms;
  }
  const double n_cases = static_cast<double>(rows.size());
  mean.ter /= n_cases;
  mean.spk_sim /= n_cases;
  mean.emo_sim /= n_cases;
  mean.av_cos /= n_cases;
  mean.wall_ms /= n_cases;
  rows.push_back(mean);
  atomic_write_file(out_path(cfg, "eval.csv").string(), records_to_csv(rows));
  std::cout << "eval mean: ter " << mean.ter << " spk " << mean.spk_sim << " emo " << mean.emo_sim
            << "\n";
  return 0;
}

int cmd_scan_blocks(const RunConfig& cfg) {
  const json& v = cfg.values;
  LoadedModels m = load_models(v, false);
  Codebook cb = make_codebook(v["model"]["F"].get<int>() / 2, v["model"]["V"].get<int>(),
                              v["data"]["codebook_seed"].get<uint64_t>());
  BenchmarkParams bp = benchmark_params_of(v);
  std::vector<EvalCase> cases = make_benchmark(cb, bp, v["seed"].get<uint64_t>());
  const int scan_cases = std::min<int>(v["eval"]["scan_cases"].get<int>(), cases.size());
  cases.resize(scan_cases);
  SampleSchedule sched = schedule_of(v, nullptr);
  auto rows = block_importance_scan(m.base, cases, sched, cb, v["seed"].get<uint64_t>(),
                                    v["train"]["threads"].get<int>());
  atomic_write_file(out_path(cfg, "scan.csv").string(), scan_to_csv(rows));
  std::vector<int> critical = critical_blocks(rows, 2);
  json summary{{"critical_blocks", critical}};
  atomic_write_file(out_path(cfg, "scan_summary.json").string(), summary.dump(2) + "\n");
  std::cout << "critical blocks: " << critical[0] << ", " << critical[1] << "\n";
  return 0;
}

int cmd_flowstep(const RunConfig& cfg) {
  const json& v = cfg.values;
  LoadedModels m = load_models(v, false);
  Codebook cb = make_codebook(v["model"]["F"].get<int>() / 2, v["model"]["V"].get<int>(),
                              v["data"]["codebook_seed"].get<uint64_t>());
  std::vector<SynthUtterance> samples =
      make_flowstep_samples(cb, v["eval"]["flow_samples"].get<int>(),
                            v["data"]["speaker_table_seed"].get<uint64_t>(), v["seed"].get<uint64_t>());
  FlowStepResult result = flowstep_analysis(
      m.base, samples, default_t_grid(), v["eval"]["flow_draws"].get<int>(),
      v["schedule"]["nfe"].get<int>(), cb, v["seed"].get<uint64_t>(),
      v["train"]["threads"].get<int>(), v["eval"]["flow_tau"].get<double>());
  atomic_write_file(out_path(cfg, "flowstep.csv").string(), flowstep_to_csv(result));
  json summary{{"t_emo_hat", result.t_emo_hat}};
  atomic_write_file(out_path(cfg, "flowstep_summary.json").string(), summary.dump(2) + "\n");
  std::cout << "t_emo_hat " << result.t_emo_hat << "\n";
  return 0;
}

int cmd_sweep_scale(const RunConfig& cfg) {
  const json& v = cfg.values;
  LoadedModels m = load_models(v, true);
  if (!m.ctrl) throw std::runtime_error("sweep-scale requires a trained control checkpoint");
  Codebook cb = make_codebook(v["model"]["F"].get<int>() / 2, v["model"]["V"].get<int>(),
                              v["data"]["codebook_seed"].get<uint64_t>());
  std::vector<EvalCase> cases = make_benchmark(cb, benchmark_params_of(v), v["seed"].get<uint64_t>());
  auto records = scale_sweep(m.base, *m.ctrl, cases, v["eval"]["lambda_grid"].get<std::vector<double>>(),
                             v["schedule"]["nfe"].get<int>(), cb, v["seed"].get<uint64_t>(),
                             v["train"]["threads"].get<int>());
  atomic_write_file(out_path(cfg, "sweep.csv").string(), records_to_csv(records));
  std::cout << "sweep: emo_sim " << records.front().emo_sim << " -> " << records.back().emo_sim
            << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const json& v = cfg.values;
  Dataset ds = load_dataset(v["paths"]["dataset"].get<std::string>());
  BaseParams base = load_base_checkpoint(v["paths"]["base"].get<std::string>());
  Codebook cb = ds.codebook();
  std::vector<EvalCase> cases = make_benchmark(cb, benchmark_params_of(v), v["seed"].get<uint64_t>());
  const std::string kind_str = v["eval"]["ablate_kind"].get<std::string>();
  AblationKind kind = kind_str == "interval"   ? AblationKind::interval
                      : kind_str == "window"   ? AblationKind::window
                                               : AblationKind::selective;
  TrainConfig tc = train_cfg_of(v, TrainConfig::Phase::ctrlnet);
  AblationOutcome outcome =
      run_ablation(kind, ctrl_cfg_of(v), ds.utterances, base, tc, cases,
                   v["schedule"]["nfe"].get<int>(), cb, v["seed"].get<uint64_t>(),
                   v["train"]["threads"].get<int>());
  atomic_write_file(out_path(cfg, "ablate_" + kind_str + ".csv").string(),
                    records_to_csv(outcome.records));
  std::cout << "ablate " << kind_str << ": " << outcome.records[0].config_tag << " vs "
            << outcome.records[1].config_tag << "\n";
  return 0;
}

}  // namespace

const std::vector<std::string>& cli_commands() {
  static const std::vector<std::string> kCommands{
      "gen-data", "pretrain", "train-ctrlnet", "synth", "eval",
      "scan-blocks", "flowstep", "sweep-scale", "ablate"};
  return kCommands;
}

int dispatch(const std::string& command, const RunConfig& cfg) {
  const auto t0 = Clock::now();
  int rc;
  if (command == "gen-data") rc = cmd_gen_data(cfg);
  else if (command == "pretrain") rc = cmd_pretrain(cfg);
  else if (command == "train-ctrlnet") rc = cmd_train_ctrlnet(cfg);
  else if (command == "synth") rc = cmd_synth(cfg);
  else if (command == "eval") rc = cmd_eval(cfg);
  else if (command == "scan-blocks") rc = cmd_scan_blocks(cfg);
  else if (command == "flowstep") rc = cmd_flowstep(cfg);
  else if (command == "sweep-scale") rc = cmd_sweep_scale(cfg);
  else if (command == "ablate") rc = cmd_ablate(cfg);
  else throw ConfigError("unknown command '" + command + "'");
  const double wall = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  write_manifest(cfg, command, wall);
  return rc;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"flowctl: flow-matching sequence generator with a time-varying control branch"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, nlohmann::json> overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option_function<uint64_t>(
        "--seed", [&](uint64_t s) { overrides["seed"] = s; }, "master seed");
    sub->add_option_function<std::string>(
        "--out", [&](std::string s) { overrides["out"] = s; }, "output directory");
    sub->add_option_function<std::string>(
        "--dataset", [&](std::string s) { overrides["paths.dataset"] = s; }, "dataset path");
    sub->add_option_function<std::string>(
        "--base", [&](std::string s) { overrides["paths.base"] = s; }, "base checkpoint path");
    sub->add_option_function<std::string>(
        "--ctrl", [&](std::string s) { overrides["paths.ctrl"] = s; }, "control checkpoint path");
    sub->add_option_function<double>(
        "--t-emo", [&](double x) { overrides["ctrl.t_emo"] = x; }, "control flow-step bound");
    sub->add_option_function<double>(
        "--lambda", [&](double x) { overrides["schedule.lambda"] = x; }, "control scale");
    sub->add_option_function<int>(
        "--nfe", [&](int x) { overrides["schedule.nfe"] = x; }, "sampler steps");
    sub->add_option_function<std::string>(
        "--blocks",
        [&](std::string s) {
          std::vector<int> blocks;
          std::stringstream ss(s);
          std::string item;
          while (std::getline(ss, item, ',')) {
            if (!item.empty()) blocks.push_back(std::stoi(item));
          }
          overrides["ctrl.blocks"] = blocks;
        },
        "selected blocks, comma separated");
    sub->add_option_function<int>(
        "--window", [&](int x) { overrides["ctrl.window"] = x; }, "emotion window size");
    sub->add_option_function<int>(
        "--steps", [&](int x) { overrides["train.steps"] = x; }, "training steps");
    sub->add_option_function<std::string>(
        "--kind", [&](std::string s) { overrides["eval.ablate_kind"] = s; }, "ablation kind");
    sub->add_option_function<int>(
        "--threads", [&](int x) { overrides["train.threads"] = x; }, "worker threads");
  };

  for (const auto& name : cli_commands()) add_common(app.add_subcommand(name));

  std::vector<const char*> argv;
  std::string prog = "flowctl";
  argv.push_back(prog.c_str());
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::ostringstream oss;
    oss << e.what();
    std::cerr << "error[config]: " << oss.str() << "\n";
    return 2;
  }

  try {
    RunConfig cfg = parse_config(config_path, overrides);
    return dispatch(app.get_subcommands().front()->get_name(), cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace flowctl
