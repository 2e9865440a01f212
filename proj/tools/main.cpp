// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
//
// dualvoice command line: corpus generation, joint training, evaluation and
// synthesis. Exit codes: 0 success, 2 usage, 3 data or configuration
// problems, 4 numeric aborts.

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "dv/checkpoint.hpp"
#include "dv/data.hpp"
#include "dv/eval.hpp"
#include "dv/sha256.hpp"
#include "dv/tasks.hpp"
#include "dv/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw dv::io_error("cannot open " + path);
  f << j.dump(2) << "\n";
  if (!f.flush()) throw dv::io_error("write failed for " + path);
}

// Exclusive run-directory lock; --force clears a stale one.
class RunLock {
 public:
  RunLock(const fs::path& dir, bool force) : path_(dir / "lock") {
    if (fs::exists(path_)) {
      if (!force)
        throw dv::io_error("run directory is locked (" + path_.string() +
                           "); pass --force if no other run is active");
      fs::remove(path_);
    }
    std::ofstream f(path_);
    if (!f) throw dv::io_error("cannot create lock file " + path_.string());
    f << ::getpid() << "\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

struct GenDataArgs {
  std::string out;
  uint64_t seed = 1;
  int vocab_size = 32;
  int frames_per_token = 4;
  int frame_dim = 16;
  int n_speakers = 8;
  double noise_std = 0.05;
  int n_train = 20000;
  int n_test = 1000;
  bool force = false;
};

int run_gen_data(const GenDataArgs& a) {
  if (fs::exists(fs::path(a.out) / "records.bin") && !a.force)
    throw dv::io_error("corpus already exists at " + a.out + "; pass --force to overwrite");
  const std::string started = iso_utc_now();

  dv::SynthSpec spec;
  spec.vocab_size = a.vocab_size;
  spec.frames_per_token = a.frames_per_token;
  spec.frame_dim = a.frame_dim;
  spec.n_speakers = a.n_speakers;
  spec.noise_std = static_cast<float>(a.noise_std);
  spec.seed = a.seed;
  spec.validate();

  fs::create_directories(a.out);
  json manifest = {
      {"command", "gen-data"},
      {"status", "running"},
      {"started_at", started},
      {"config",
       {{"vocab_size", spec.vocab_size},
        {"frames_per_token", spec.frames_per_token},
        {"frame_dim", spec.frame_dim},
        {"n_speakers", spec.n_speakers},
        {"noise_std", spec.noise_std},
        {"seed", spec.seed},
        {"n_train", a.n_train},
        {"n_test", a.n_test}}},
  };
  write_json_file((fs::path(a.out) / "manifest.json").string(), manifest);

  dv::Corpus corpus = dv::generate_corpus(spec, a.n_train, a.n_test);
  dv::save_corpus(corpus, a.out);

  manifest["status"] = "complete";
  manifest["finished_at"] = iso_utc_now();
  manifest["files"] = {
      {"spec.txt", dv::sha256_file_hex((fs::path(a.out) / "spec.txt").string())},
      {"records.bin", dv::sha256_file_hex((fs::path(a.out) / "records.bin").string())},
  };
  write_json_file((fs::path(a.out) / "manifest.json").string(), manifest);

  std::printf("wrote corpus to %s (train=%zu test=%zu)\n", a.out.c_str(), corpus.train.size(),
              corpus.test.size());
  return 0;
}

struct TrainArgs {
  std::string corpus;
  std::string out;
  uint64_t seed = 0;
  int64_t steps = 20000;
  int batch_items = 8;
  double lambda_lm = 0.005;
  std::string task_mix = "joint";
  std::string tts_mask = "full";
  double lr_peak = 3e-4;
  int64_t warmup = 500;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 6;
  int max_positions = 192;
  int adapter_pool = 4;
  bool untie_lm_head = false;
  int64_t eval_interval = 1000;
  int eval_asr_items = 32;
  int eval_tts_items = 16;
  int eval_nfe = 16;
  int64_t checkpoint_interval = 2000;
  int64_t stop_after = -1;
  bool resume = false;
  bool force = false;
};

dv::TaskMix parse_task_mix(const std::string& s) {
  if (s == "joint") return dv::TaskMix::Joint;
  if (s == "asr_only") return dv::TaskMix::AsrOnly;
  if (s == "tts_only") return dv::TaskMix::TtsOnly;
  throw dv::config_error("unknown task mix: " + s);
}

dv::TtsMaskKind parse_tts_mask(const std::string& s) {
  if (s == "full") return dv::TtsMaskKind::Full;
  if (s == "causal") return dv::TtsMaskKind::Causal;
  throw dv::config_error("unknown tts mask: " + s);
}

int run_train(const TrainArgs& a) {
  dv::Corpus corpus = dv::load_corpus(a.corpus);

  dv::ModelConfig mcfg;
  mcfg.d_model = a.d_model;
  mcfg.n_heads = a.n_heads;
  mcfg.n_layers = a.n_layers;
  mcfg.vocab_size = corpus.spec.vocab_size;
  mcfg.frame_dim = corpus.spec.frame_dim;
  mcfg.max_positions = a.max_positions;
  mcfg.adapter_pool = a.adapter_pool;
  mcfg.tie_lm_head = !a.untie_lm_head;
  mcfg.validate();

  dv::TrainConfig tcfg;
  tcfg.total_steps = a.steps;
  tcfg.batch_items = a.batch_items;
  tcfg.lambda_lm = a.lambda_lm;
  tcfg.lr_peak = a.lr_peak;
  tcfg.warmup_steps = a.warmup;
  tcfg.weight_decay = a.weight_decay;
  tcfg.grad_clip = a.grad_clip;
  tcfg.seed = a.seed;
  tcfg.task_mix = parse_task_mix(a.task_mix);
  tcfg.tts.mask_kind = parse_tts_mask(a.tts_mask);
  tcfg.eval_interval = a.eval_interval;
  tcfg.eval_asr_items = a.eval_asr_items;
  tcfg.eval_tts_items = a.eval_tts_items;
  tcfg.eval_nfe = a.eval_nfe;
  tcfg.checkpoint_interval = a.checkpoint_interval;
  tcfg.stop_after = a.stop_after;
  tcfg.validate();

  fs::create_directories(a.out);
  RunLock lock(a.out, a.force);
  const std::string started = iso_utc_now();
  json manifest = {
      {"command", "train"},
      {"status", "running"},
      {"started_at", started},
      {"corpus", a.corpus},
      {"corpus_spec_sha256", dv::sha256_file_hex((fs::path(a.corpus) / "spec.txt").string())},
      {"config",
       {{"steps", a.steps},
        {"batch_items", a.batch_items},
        {"lambda", a.lambda_lm},
        {"task_mix", a.task_mix},
        {"tts_mask", a.tts_mask},
        {"lr_peak", a.lr_peak},
        {"warmup", a.warmup},
        {"weight_decay", a.weight_decay},
        {"grad_clip", a.grad_clip},
        {"seed", a.seed},
        {"resume", a.resume},
        {"d_model", a.d_model},
        {"n_heads", a.n_heads},
        {"n_layers", a.n_layers},
        {"max_positions", a.max_positions},
        {"adapter_pool", a.adapter_pool},
        {"tie_lm_head", !a.untie_lm_head}}},
  };
  write_json_file((fs::path(a.out) / "manifest.json").string(), manifest);

  dv::TrainRunResult res = dv::train_run(a.out, corpus, mcfg, tcfg, a.resume);

  manifest["status"] = "complete";
  manifest["finished_at"] = iso_utc_now();
  manifest["final_step"] = res.final_step;
  manifest["checkpoint_sha256"] = dv::sha256_file_hex(res.checkpoint_path);
  write_json_file((fs::path(a.out) / "manifest.json").string(), manifest);

  std::printf("trained to step %lld (loss=%.6g asr=%.6g tts=%.6g); checkpoint at %s\n",
              static_cast<long long>(res.final_step), res.last_loss, res.last_asr_loss,
              res.last_tts_loss, res.checkpoint_path.c_str());
  return 0;
}

dv::Model<float> load_model(const std::string& checkpoint_path) {
  dv::CheckpointFile ck = dv::read_checkpoint(checkpoint_path);
  dv::Model<float> model(ck.cfg, 0);
  dv::TrainState state;
  state.opt = dv::AdamState::init_for(model);
  dv::load_train_checkpoint(checkpoint_path, model, state);
  return model;
}

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out;
  int asr_items = -1;
  int tts_items = -1;
  int nfe = 32;
  double cfg_weight = 2.0;
  std::string scheme = "euler";
  uint64_t seed = 0;
  std::string metrics_log;
  std::string csv;
};

dv::OdeScheme parse_scheme(const std::string& s) {
  if (s == "euler") return dv::OdeScheme::Euler;
  if (s == "midpoint") return dv::OdeScheme::Midpoint;
  throw dv::config_error("unknown ode scheme: " + s);
}

// key=value metrics lines with event=eval become CSV rows
void metrics_to_csv(const std::string& log_path, const std::string& csv_path) {
  std::ifstream in(log_path);
  if (!in) throw dv::io_error("cannot open " + log_path);
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw dv::io_error("cannot open " + csv_path);
  const std::vector<std::string> cols = {"step",    "asr_ter",  "tts_ter",
                                         "tts_mse", "sim_seen", "sim_unseen"};
  for (size_t i = 0; i < cols.size(); ++i) out << cols[i] << (i + 1 < cols.size() ? "," : "\n");
  std::string line;
  while (std::getline(in, line)) {
    if (line.find("event=eval") == std::string::npos) continue;
    std::map<std::string, std::string> kv;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    for (size_t i = 0; i < cols.size(); ++i) {
      auto it = kv.find(cols[i]);
      out << (it == kv.end() ? "" : it->second) << (i + 1 < cols.size() ? "," : "\n");
    }
  }
  if (!out.flush()) throw dv::io_error("write failed for " + csv_path);
}

int run_eval(const EvalArgs& a) {
  if (!a.metrics_log.empty() && !a.csv.empty()) metrics_to_csv(a.metrics_log, a.csv);
  if (a.checkpoint.empty()) {
    if (!a.metrics_log.empty()) return 0;  // curve conversion only
    throw dv::config_error("eval: --checkpoint is required");
  }
  dv::Corpus corpus = dv::load_corpus(a.corpus);
  dv::Model<float> model = load_model(a.checkpoint);
  dv::Oracle oracle(corpus.spec);

  dv::EvalOptions opts;
  opts.asr_items = a.asr_items;
  opts.tts_items = a.tts_items;
  opts.nfe = a.nfe;
  opts.cfg_weight = a.cfg_weight;
  opts.scheme = parse_scheme(a.scheme);
  opts.seed = a.seed;
  dv::EvalReport r = dv::evaluate(model, corpus, oracle, opts);

  auto split_json = [](const dv::SplitMetrics& m) {
    return json{{"ter", m.ter}, {"sim", m.sim}, {"mse", m.mse}, {"count", m.count}};
  };
  json report = {
      {"checkpoint", a.checkpoint},
      {"checkpoint_sha256", dv::sha256_file_hex(a.checkpoint)},
      {"corpus", a.corpus},
      {"corpus_spec_sha256", dv::sha256_file_hex((fs::path(a.corpus) / "spec.txt").string())},
      {"seed", a.seed},
      {"nfe", a.nfe},
      {"cfg_weight", a.cfg_weight},
      {"scheme", a.scheme},
      {"asr", {{"ter", r.asr_ter}, {"count", r.asr_count}}},
      {"tts",
       {{"seen", split_json(r.seen)},
        {"unseen", split_json(r.unseen)},
        {"overall", split_json(r.overall)}}},
  };
  if (!a.out.empty()) write_json_file(a.out, report);
  std::printf("%s\n", report.dump(2).c_str());
  return 0;
}

struct SynthArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out;
  int ref_index = 0;
  std::string text;
  int nfe = 32;
  double cfg_weight = 2.0;
  std::string scheme = "euler";
  uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  dv::Corpus corpus = dv::load_corpus(a.corpus);
  if (a.ref_index < 0 || a.ref_index >= static_cast<int>(corpus.test.size()))
    throw dv::config_error("synth: --ref-index outside the test split");
  dv::Model<float> model = load_model(a.checkpoint);

  std::vector<int> gen_text;
  std::istringstream ts(a.text);
  int tok;
  while (ts >> tok) gen_text.push_back(tok);
  if (gen_text.empty()) throw dv::config_error("synth: --text must list token ids");
  const int term = dv::terminal_token(corpus.spec.vocab_size);
  if (gen_text.back() != term) gen_text.push_back(term);

  const dv::SynthExample& ref = corpus.test[a.ref_index];
  dv::TtsInferenceRequest req;
  req.ref_text = ref.tokens;
  req.ref_frames = ref.frames;
  req.gen_text = gen_text;
  req.sampler.nfe = a.nfe;
  req.sampler.cfg_weight = a.cfg_weight;
  req.sampler.scheme = parse_scheme(a.scheme);
  req.sampler.seed = a.seed;

  const std::string started = iso_utc_now();
  dv::FrameMatrix gen = dv::synthesize(model, req);
  dv::save_frames(gen, a.out);

  json manifest = {
      {"command", "synth"},
      {"status", "complete"},
      {"started_at", started},
      {"finished_at", iso_utc_now()},
      {"checkpoint", a.checkpoint},
      {"checkpoint_sha256", dv::sha256_file_hex(a.checkpoint)},
      {"corpus", a.corpus},
      {"corpus_spec_sha256", dv::sha256_file_hex((fs::path(a.corpus) / "spec.txt").string())},
      {"config",
       {{"ref_index", a.ref_index},
        {"text", a.text},
        {"nfe", a.nfe},
        {"cfg_weight", a.cfg_weight},
        {"scheme", a.scheme},
        {"seed", a.seed}}},
      {"files", {{fs::path(a.out).filename().string(), dv::sha256_file_hex(a.out)}}},
  };
  write_json_file(a.out + ".manifest.json", manifest);

  dv::Oracle oracle(corpus.spec);
  dv::OracleDecode dec = oracle.decode(gen);
  std::ostringstream toks;
  for (size_t i = 0; i < dec.tokens.size(); ++i) toks << (i ? " " : "") << dec.tokens[i];
  std::printf("wrote %dx%d frames to %s\noracle decode: %s\n", gen.rows, gen.cols, a.out.c_str(),
              toks.str().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint sequence recognition and flow-matching frame synthesis"};
  app.require_subcommand(1);

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic paired corpus");
  gen->add_option("--out", gd.out, "corpus directory")->required();
  gen->add_option("--seed", gd.seed, "corpus seed");
  gen->add_option("--vocab-size", gd.vocab_size, "token vocabulary size");
  gen->add_option("--frames-per-token", gd.frames_per_token, "frames rendered per token");
  gen->add_option("--frame-dim", gd.frame_dim, "frame feature width");
  gen->add_option("--n-speakers", gd.n_speakers, "speaker count");
  gen->add_option("--noise-std", gd.noise_std, "frame noise standard deviation");
  gen->add_option("--n-train", gd.n_train, "training examples");
  gen->add_option("--n-test", gd.n_test, "test examples");
  gen->add_flag("--force", gd.force, "overwrite an existing corpus");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train the joint model");
  train->add_option("--corpus", tr.corpus, "corpus directory")->required();
  train->add_option("--out", tr.out, "run directory")->required();
  train->add_option("--seed", tr.seed, "training seed");
  train->add_option("--steps", tr.steps, "total optimizer steps");
  train->add_option("--batch-items", tr.batch_items, "items per task per step");
  train->add_option("--lambda", tr.lambda_lm, "language-model loss weight");
  train->add_option("--task-mix", tr.task_mix, "joint|asr_only|tts_only");
  train->add_option("--tts-mask", tr.tts_mask, "full|causal attention over frames");
  train->add_option("--lr-peak", tr.lr_peak, "peak learning rate");
  train->add_option("--warmup", tr.warmup, "linear warmup steps");
  train->add_option("--weight-decay", tr.weight_decay, "decoupled weight decay");
  train->add_option("--grad-clip", tr.grad_clip, "global gradient norm clip");
  train->add_option("--d-model", tr.d_model, "model width");
  train->add_option("--n-heads", tr.n_heads, "attention heads");
  train->add_option("--n-layers", tr.n_layers, "transformer layers");
  train->add_option("--max-positions", tr.max_positions, "position budget");
  train->add_option("--adapter-pool", tr.adapter_pool, "audio adapter pooling window");
  train->add_flag("--untie-lm-head", tr.untie_lm_head, "separate LM head weights");
  train->add_option("--eval-interval", tr.eval_interval, "steps between eval events");
  train->add_option("--eval-asr-items", tr.eval_asr_items, "eval decode items");
  train->add_option("--eval-tts-items", tr.eval_tts_items, "eval synthesis items");
  train->add_option("--eval-nfe", tr.eval_nfe, "eval sampler steps");
  train->add_option("--checkpoint-interval", tr.checkpoint_interval, "steps between checkpoints");
  train->add_option("--stop-after", tr.stop_after, "stop after this absolute step");
  train->add_flag("--resume", tr.resume, "resume from the run checkpoint");
  train->add_flag("--force", tr.force, "clear a stale run lock");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file");
  eval_cmd->add_option("--corpus", ev.corpus, "corpus directory");
  eval_cmd->add_option("--out", ev.out, "JSON report path");
  eval_cmd->add_option("--asr-items", ev.asr_items, "decode item budget (-1: all)");
  eval_cmd->add_option("--tts-items", ev.tts_items, "synthesis item budget (-1: all)");
  eval_cmd->add_option("--nfe", ev.nfe, "sampler steps");
  eval_cmd->add_option("--cfg-weight", ev.cfg_weight, "guidance weight");
  eval_cmd->add_option("--scheme", ev.scheme, "euler|midpoint");
  eval_cmd->add_option("--seed", ev.seed, "sampler seed");
  eval_cmd->add_option("--metrics-log", ev.metrics_log, "metrics log to convert");
  eval_cmd->add_option("--csv", ev.csv, "CSV output for eval curves");

  SynthArgs sy;
  CLI::App* synth = app.add_subcommand("synth", "synthesize frames for a transcript");
  synth->add_option("--checkpoint", sy.checkpoint, "checkpoint file")->required();
  synth->add_option("--corpus", sy.corpus, "corpus directory")->required();
  synth->add_option("--out", sy.out, "output frames file")->required();
  synth->add_option("--ref-index", sy.ref_index, "test item used as the voice reference");
  synth->add_option("--text", sy.text, "space separated token ids")->required();
  synth->add_option("--nfe", sy.nfe, "sampler steps");
  synth->add_option("--cfg-weight", sy.cfg_weight, "guidance weight");
  synth->add_option("--scheme", sy.scheme, "euler|midpoint");
  synth->add_option("--seed", sy.seed, "sampler seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gd);
    if (train->parsed()) return run_train(tr);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (synth->parsed()) return run_synth(sy);
    return 2;
  } catch (const dv::numeric_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const dv::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
