#include "w2p/experiment.hpp"

#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "w2p/errors.hpp"
#include "w2p/io.hpp"

namespace w2p::exp {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using sys::System;

namespace {

constexpr const char* kFixtureKind = "lm-fixture";
constexpr const char* kCheckpointKind = "checkpoint";

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError("cannot write " + path.string());
  os << text;
}

ordered_json summary_json(const metrics::Summary& s) {
  return {{"count", s.count},
          {"exact_match", s.exact_match},
          {"token_accuracy", s.token_accuracy},
          {"edit_rate", s.edit_rate}};
}

ordered_json epoch_json(const train::EpochRecord& r, const std::string& stage) {
  ordered_json j{{"stage", stage},
                 {"epoch", r.epoch},
                 {"steps", r.steps},
                 {"loss",
                  {{"total", r.loss.total}, {"ce", r.loss.ce}, {"mse", r.loss.mse}, {"qua", r.loss.qua}}},
                 {"grad_norm", r.grad_norm},
                 {"mean_events", r.mean_events}};
  if (r.val_token_accuracy) j["val_token_accuracy"] = *r.val_token_accuracy;
  if (r.val_exact_match) j["val_exact_match"] = *r.val_exact_match;
  return j;
}

train::SpeechCorpus corpus(const Fixture& fx, lm::Task task, data::Split split, std::size_t limit = 0) {
  auto ds = data::build_task_dataset(fx.world, task, split);
  if (limit > 0 && ds.records.size() > limit) ds.records.resize(limit);
  return {&fx.world.speech, std::move(ds.records)};
}

std::string lines(const ordered_json& array) {
  std::string out;
  for (const auto& j : array) out += j.dump() + "\n";
  return out;
}

// Config subtrees a CTC checkpoint depends on.
ordered_json ctc_identity(const ordered_json& config) {
  return {{"seed", config.at("seed")},
          {"fixture", config.at("fixture")},
          {"model", config.at("model")},
          {"ctc", config.at("train").at("ctc")}};
}

Checkpoint run_stage(const cfg::ExperimentConfig& c, const Fixture& fx, System s,
                     const std::string& stage, diff::ParamSet init, const train::SpeechCorpus& tr,
                     const train::SpeechCorpus& val, train::TrainConfig tc, std::uint64_t seed,
                     const Log& log) {
  tc.seed = seed;
  tc.decode = c.decode;
  tc.exec = c.exec;
  Checkpoint ck;
  ck.system = s;
  ck.stage = stage;
  ck.config = cfg::to_json(c);
  tc.on_epoch = [&](const train::EpochRecord& r) {
    ck.history.push_back(epoch_json(r, stage));
    std::string msg = sys::to_string(s) + " " + stage + " epoch " + std::to_string(r.epoch) +
                      " loss " + fmt(r.loss.total, 4) + " (ce " + fmt(r.loss.ce, 4) + " mse " +
                      fmt(r.loss.mse, 4) + " qua " + fmt(r.loss.qua, 4) + ") events " + fmt(r.mean_events);
    if (r.val_token_accuracy) msg += " val token acc " + fmt(*r.val_token_accuracy);
    say(log, msg);
  };
  auto result = train::run_training(s, c.model, fx.lm, std::move(init), tr, val, tc);
  ck.params = std::move(result.params);
  ck.optimizer = std::move(result.optimizer);
  ck.lm_checksum = result.lm_checksum;
  ck.epoch = result.best_epoch;
  return ck;
}

void archive(const cfg::ExperimentConfig& c, const Checkpoint& ck, const fs::path& ckpt,
             const std::string& metrics_name) {
  save_checkpoint(ckpt, ck);
  write_text(fs::path(c.out_dir) / metrics_name, lines(ck.history));
}

Checkpoint train_ctc(const cfg::ExperimentConfig& c, const Fixture& fx, const Log& log) {
  auto init = sys::make_params(System::Cascade, c.model, fx.lm.config(),
                               cfg::sub_seed(c, cfg::SeedStream::CtcInit));
  Checkpoint ck = run_stage(c, fx, System::Cascade, "asr-train", std::move(init),
                            corpus(fx, lm::Task::Transcribe, data::Split::AsrTrain),
                            corpus(fx, lm::Task::Transcribe, data::Split::FewShot), c.ctc,
                            cfg::sub_seed(c, cfg::SeedStream::CtcShuffle), log);
  archive(c, ck, checkpoint_path(c, System::Cascade), "train-cascade.jsonl");
  return ck;
}

Checkpoint ctc_for(const cfg::ExperimentConfig& c, const Fixture& fx, const Log& log) {
  const fs::path path = checkpoint_path(c, System::Cascade);
  if (!fs::exists(path)) {
    say(log, "no CTC checkpoint at " + path.string() + ", training it first");
    return train_ctc(c, fx, log);
  }
  Checkpoint ck = load_checkpoint(path, fx.lm);
  if (ctc_identity(ck.config) != ctc_identity(cfg::to_json(c)))
    throw IntegrityError(path.string() + " was trained with a different config; remove it or use another --out");
  return ck;
}

}  // namespace

// --- Fixture ---------------------------------------------------------------

fs::path lm_fixture_path(const cfg::ExperimentConfig& c) { return fs::path(c.fixture_dir) / "lm.bin"; }
fs::path lm_meta_path(const cfg::ExperimentConfig& c) { return fs::path(c.fixture_dir) / "lm.json"; }

std::map<lm::Task, double> text_competence(const data::World& world, const lm::FrozenLM& lm,
                                           const cfg::ExperimentConfig& c) {
  const std::size_t n = std::min(c.fixture.competence_limit, world.test.size());
  if (n == 0) throw DegenerateInputError("text_competence: no held-out sentences");
  std::map<lm::Task, double> out;
  for (lm::Task task : lm::kAllTasks) {
    auto ok = par::map_indexed<int>(
        n,
        [&](std::size_t i) {
          const auto& s = world.test[i];
          return sys::oracle_infer(lm, s, task, c.decode) == data::task_answer(world.grammar, task, s) ? 1 : 0;
        },
        c.exec);
    int hits = 0;
    for (int v : ok) hits += v;
    out[task] = 100.0 * hits / static_cast<double>(n);
  }
  return out;
}

Fixture build_fixture(const cfg::ExperimentConfig& c, const Log& log) {
  const auto& fc = c.fixture;
  say(log, "building synthetic world (seed " + std::to_string(fc.data.seed) + ")");
  data::World world = data::World::build(fc.data);
  const fs::path data_dir = fs::path(c.fixture_dir) / "data";
  fs::create_directories(data_dir);
  for (lm::Task task : lm::kAllTasks)
    for (data::Split split : {data::Split::AsrTrain, data::Split::FewShot, data::Split::Test}) {
      if (split == data::Split::AsrTrain && task != lm::Task::Transcribe) continue;
      const auto ds = data::build_task_dataset(world, task, split);
      const std::string stem = lm::to_string(task) + "-" + data::to_string(split);
      data::write_dataset(world, ds, data_dir / (stem + ".jsonl"), data_dir / (stem + ".bin"));
    }

  const auto train = data::gen_instruction_corpus(world.grammar, world.lm_train);
  const std::size_t nh = std::min(fc.pretrain_heldout, world.lm_heldout.size());
  const std::vector<lm::Tokens> held_sentences(world.lm_heldout.begin(),
                                               world.lm_heldout.begin() + static_cast<std::ptrdiff_t>(nh));
  const auto held = data::gen_instruction_corpus(world.grammar, held_sentences);
  lm::PretrainConfig pc;
  pc.max_epochs = fc.pretrain_epochs;
  pc.batch_size = fc.pretrain_batch;
  pc.learning_rate = fc.pretrain_lr;
  pc.final_learning_rate = fc.pretrain_final_lr;
  pc.exec = c.exec;
  pc.on_epoch = [&](int e, double loss, double ppl) {
    say(log, "lm epoch " + std::to_string(e) + " loss " + fmt(loss, 4) + " held-out ppl " + fmt(ppl, 5));
  };
  say(log, "pretraining LM on " + std::to_string(train.size()) + " instruction lines");
  auto result = lm::pretrain(fc.lm, train, held, pc, fc.lm_seed);
  lm::FrozenLM lm(fc.lm, result.params);

  say(log, "measuring text-path competence");
  const auto comp = text_competence(world, lm, c);
  bool usable = true;
  ordered_json comp_j;
  for (const auto& [task, em] : comp) {
    comp_j[lm::to_string(task)] = em;
    usable = usable && em >= fc.competence_threshold;
    say(log, "  " + lm::to_string(task) + " exact match " + fmt(em));
  }
  ordered_json meta{{"kind", kFixtureKind},
                    {"checksum", io::hex(lm.checksum())},
                    {"lm_seed", fc.lm_seed},
                    {"perplexity", result.perplexity},
                    {"epochs", result.epochs},
                    {"competence", comp_j},
                    {"competence_threshold", fc.competence_threshold},
                    {"usable", usable},
                    {"fixture_config", cfg::to_json(fc)}};
  io::write_container(lm_fixture_path(c), {kFixtureKind, meta.dump(), lm.params()});
  write_text(lm_meta_path(c), meta.dump(2) + "\n");
  if (!usable)
    throw IntegrityError("fixture LM below the competence threshold; marked unusable");
  return Fixture{std::move(world), std::move(lm), std::move(meta)};
}

Fixture load_fixture(const cfg::ExperimentConfig& c) {
  const auto path = lm_fixture_path(c);
  if (!fs::exists(path)) throw IntegrityError("no fixture at " + path.string() + "; run `fixtures` first");
  auto container = io::read_container(path, kFixtureKind);
  ordered_json meta;
  try {
    meta = ordered_json::parse(container.header);
  } catch (const json::exception& e) {
    throw IntegrityError(path.string() + ": unreadable header");
  }
  if (meta.value("usable", false) != true) throw IntegrityError(path.string() + " is marked unusable");
  if (meta.at("fixture_config") != cfg::to_json(c.fixture))
    throw IntegrityError(path.string() + " was built with a different fixture config");
  lm::FrozenLM lm(c.fixture.lm, container.arrays);
  if (io::hex(lm.checksum()) != meta.at("checksum").get<std::string>())
    throw IntegrityError(path.string() + ": LM checksum differs from the recorded one");
  return Fixture{data::World::build(c.fixture.data), std::move(lm), std::move(meta)};
}

Fixture ensure_fixture(const cfg::ExperimentConfig& c, const Log& log) {
  if (fs::exists(lm_fixture_path(c))) return load_fixture(c);
  return build_fixture(c, log);
}

// --- Checkpoints -----------------------------------------------------------

fs::path checkpoint_path(const cfg::ExperimentConfig& c, System s, std::optional<lm::Task> finetuned) {
  std::string name = sys::to_string(s);
  if (finetuned) name += "." + lm::to_string(*finetuned);
  return fs::path(c.out_dir) / (name + ".ckpt");
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  io::Container out;
  out.kind = kCheckpointKind;
  ordered_json header{{"system", sys::to_string(ck.system)},
                      {"stage", ck.stage},
                      {"lm_checksum", io::hex(ck.lm_checksum)},
                      {"epoch", ck.epoch},
                      {"optimizer_steps", ck.optimizer.steps},
                      {"config", ck.config},
                      {"history", ck.history}};
  out.header = header.dump();
  out.arrays = ck.params;
  const bool has_moments = !ck.optimizer.first.empty();
  if (has_moments) {
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      const auto& p = ck.params[static_cast<diff::ParamId>(i)];
      if (!p.trainable()) continue;
      out.arrays.add("opt.m:" + p.name(), ck.optimizer.first.at(i), false);
      out.arrays.add("opt.v:" + p.name(), ck.optimizer.second.at(i), false);
    }
  }
  io::write_container(path, out);
}

Checkpoint load_checkpoint(const fs::path& path, const lm::FrozenLM& lm) {
  auto in = io::read_container(path, kCheckpointKind);
  ordered_json header;
  try {
    header = ordered_json::parse(in.header);
  } catch (const json::exception&) {
    throw IntegrityError(path.string() + ": unreadable header");
  }
  Checkpoint ck;
  ck.system = sys::parse_system(header.at("system").get<std::string>());
  ck.stage = header.at("stage").get<std::string>();
  ck.epoch = header.at("epoch").get<int>();
  ck.optimizer.steps = header.at("optimizer_steps").get<std::int64_t>();
  ck.config = header.at("config");
  ck.history = header.at("history");
  if (header.at("lm_checksum").get<std::string>() != io::hex(lm.checksum()))
    throw IntegrityError(path.string() + " was trained against a different LM");
  ck.lm_checksum = lm.checksum();

  std::map<std::string, Matrix> first, second;
  for (const auto& p : in.arrays.params()) {
    const auto& n = p.name();
    if (n.rfind("opt.m:", 0) == 0)
      first[n.substr(6)] = p.value();
    else if (n.rfind("opt.v:", 0) == 0)
      second[n.substr(6)] = p.value();
    else
      ck.params.add(n, p.value(), p.trainable());
  }
  if (!first.empty()) {
    for (const auto& p : ck.params.params()) {
      if (!p.trainable()) {
        ck.optimizer.first.emplace_back();
        ck.optimizer.second.emplace_back();
        continue;
      }
      if (!first.count(p.name()) || !second.count(p.name()))
        throw IntegrityError(path.string() + ": optimizer state missing for " + p.name());
      ck.optimizer.first.push_back(first.at(p.name()));
      ck.optimizer.second.push_back(second.at(p.name()));
    }
  }
  return ck;
}

// --- Commands --------------------------------------------------------------

std::optional<Checkpoint> train_system(const cfg::ExperimentConfig& c, const Fixture& fx,
                                       const Log& log) {
  const System s = c.system;
  cfg::save(fs::path(c.out_dir) / ("train-" + sys::to_string(s) + ".config.json"), c);
  if (s == System::Oracle) {
    say(log, "oracle has no parameters; nothing to train");
    return std::nullopt;
  }
  if (s == System::Cascade) return train_ctc(c, fx, log);

  auto init = sys::make_params(s, c.model, fx.lm.config(), cfg::sub_seed(c, cfg::SeedStream::Init));
  if (s != System::Wav2Prompt) sys::copy_encoder(init, ctc_for(c, fx, log).params);

  Checkpoint ck;
  if (s == System::FlatStartEncoderLlm) {
    ck.system = s;
    ck.stage = "ctc-init";
    ck.params = std::move(init);
    ck.lm_checksum = fx.lm.checksum();
    ck.config = cfg::to_json(c);
  } else {
    ck = run_stage(c, fx, s, "asr-train", std::move(init),
                   corpus(fx, lm::Task::Transcribe, data::Split::AsrTrain),
                   corpus(fx, lm::Task::Transcribe, data::Split::FewShot), c.asr,
                   cfg::sub_seed(c, cfg::SeedStream::Shuffle), log);
  }
  archive(c, ck, checkpoint_path(c, s), "train-" + sys::to_string(s) + ".jsonl");
  return ck;
}

Checkpoint finetune_system(const cfg::ExperimentConfig& c, const Fixture& fx, lm::Task task,
                           const Log& log) {
  const System s = c.system;
  if (s == System::Oracle) throw UsageError("oracle has no parameters to fine-tune");
  const fs::path base_path = checkpoint_path(c, s);
  if (!fs::exists(base_path))
    throw IntegrityError("no base checkpoint at " + base_path.string() + "; run `train` first");
  Checkpoint base = load_checkpoint(base_path, fx.lm);
  cfg::save(fs::path(c.out_dir) / ("finetune-" + sys::to_string(s) + "-" + lm::to_string(task) + ".config.json"), c);

  const std::uint64_t seed =
      data::derive_seed(cfg::sub_seed(c, cfg::SeedStream::Shuffle), static_cast<std::uint64_t>(task), 7);
  const std::string stage = "few-shot:" + lm::to_string(task);
  const auto few = corpus(fx, task, data::Split::FewShot);
  Checkpoint ck = run_stage(c, fx, s, stage, std::move(base.params), few,
                            train::SpeechCorpus{&fx.world.speech, {}}, c.finetune, seed, log);
  if (s == System::Wav2Prompt && !ck.history.empty() && few.size() > 0) {
    double length = 0.0;
    for (const auto& r : few.records) length += static_cast<double>(r.input.size());
    length /= static_cast<double>(few.size());
    const double events = ck.history.back().at("mean_events").get<double>();
    say(log, "firing-count drift: " + fmt(events) + " events per utterance against " + fmt(length) +
                 " transcript tokens (" + fmt(events - length) + ")");
  }
  ordered_json history = base.history;
  for (const auto& h : ck.history) history.push_back(h);
  ck.history = std::move(history);
  save_checkpoint(checkpoint_path(c, s, task), ck);
  write_text(fs::path(c.out_dir) / ("finetune-" + sys::to_string(s) + "-" + lm::to_string(task) + ".jsonl"),
             lines(ck.history));
  return ck;
}

EvalResult evaluate(const cfg::ExperimentConfig& c, const Fixture& fx, System s, lm::Task task,
                    data::Split split, std::optional<fs::path> checkpoint, const Log& log) {
  diff::ParamSet params;
  std::string tag = sys::to_string(s);
  if (s != System::Oracle) {
    const fs::path path = checkpoint ? *checkpoint : checkpoint_path(c, s);
    if (!fs::exists(path)) throw IntegrityError("no checkpoint at " + path.string() + "; run `train` first");
    Checkpoint ck = load_checkpoint(path, fx.lm);
    if (ck.system != s)
      throw UsageError(path.string() + " holds a " + sys::to_string(ck.system) + " model, not " + sys::to_string(s));
    params = std::move(ck.params);
    tag = path.stem().string();
  }
  auto ds = data::build_task_dataset(fx.world, task, split);
  if (c.eval_limit > 0 && ds.records.size() > c.eval_limit) ds.records.resize(c.eval_limit);
  if (ds.records.empty()) throw DegenerateInputError("evaluation split is empty");

  EvalResult out;
  out.outputs = par::map_indexed<lm::Tokens>(
      ds.records.size(),
      [&](std::size_t i) {
        const auto& r = ds.records[i];
        sys::Utterance u{s == System::Oracle ? Matrix() : data::features(fx.world, r), r.input};
        return sys::infer(s, c.model, fx.lm, params, u, task, c.decode);
      },
      c.exec);
  std::vector<lm::Tokens> targets;
  for (const auto& r : ds.records) targets.push_back(r.target);
  out.summary = metrics::summarize(out.outputs, targets);

  const auto& v = lm::vocab();
  std::string text;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    ordered_json j{{"id", r.id},
                   {"input", v.decode(r.input)},
                   {"target", v.decode(r.target)},
                   {"output", v.decode(out.outputs[i])},
                   {"exact", out.outputs[i] == r.target},
                   {"edits", metrics::edit_distance(out.outputs[i], r.target)}};
    text += j.dump() + "\n";
  }
  ordered_json summary{{"summary", summary_json(out.summary)},
                       {"system", sys::to_string(s)},
                       {"checkpoint", tag},
                       {"task", lm::to_string(task)},
                       {"split", data::to_string(split)},
                       {"seed", c.seed}};
  text += summary.dump() + "\n";
  out.file = fs::path(c.out_dir) / ("eval-" + tag + "-" + lm::to_string(task) + "-" + data::to_string(split) + ".jsonl");
  write_text(out.file, text);
  say(log, tag + " " + lm::to_string(task) + "/" + data::to_string(split) + ": exact match " +
               fmt(out.summary.exact_match) + ", token accuracy " + fmt(out.summary.token_accuracy));
  return out;
}

std::vector<AblationRow> ablate(const cfg::ExperimentConfig& c, const Fixture& fx, const Log& log) {
  std::vector<AblationRow> rows;
  const std::vector<lm::Task> tasks = {lm::Task::Reverse, lm::Task::Cipher};
  for (double gamma : {20.0, 0.0}) {
    cfg::ExperimentConfig ci = c;
    ci.system = System::Wav2Prompt;
    ci.asr.gamma = gamma;
    ci.out_dir = (fs::path(c.out_dir) / "ablate" / ("gamma-" + fmt(gamma, 0))).string();
    say(log, "ablation: wav2prompt with gamma " + fmt(gamma, 0));
    train_system(ci, fx, log);
    AblationRow row;
    row.gamma = gamma;
    for (auto t : tasks) row.zero_shot[t] = evaluate(ci, fx, System::Wav2Prompt, t, data::Split::Test, std::nullopt, log).summary;
    rows.push_back(std::move(row));
  }

  std::ostringstream table;
  table << std::left << std::setw(12) << "gamma";
  for (auto t : tasks) table << std::right << std::setw(16) << (lm::to_string(t) + " EM");
  table << "\n";
  ordered_json j{{"seed", c.seed}, {"split", "test"}, {"rows", ordered_json::array()}};
  for (const auto& r : rows) {
    table << std::left << std::setw(12) << fmt(r.gamma, 0);
    ordered_json jr{{"gamma", r.gamma}};
    for (auto t : tasks) {
      table << std::right << std::setw(16) << fmt(r.zero_shot.at(t).exact_match);
      jr[lm::to_string(t)] = summary_json(r.zero_shot.at(t));
    }
    table << "\n";
    j["rows"].push_back(jr);
  }
  table << "seed " << c.seed << ", zero-shot exact match on the test split\n";
  write_text(fs::path(c.out_dir) / "ablation.txt", table.str());
  write_text(fs::path(c.out_dir) / "ablation.json", j.dump(2) + "\n");
  say(log, "\n" + table.str());
  return rows;
}

// --- Gradient checks ---------------------------------------------------------

std::vector<NamedReport> gradcheck_suite(std::uint64_t seed) {
  lm::LmConfig lc;
  lc.d_model = 8;
  lc.layers = 1;
  lc.heads = 2;
  lc.d_ff = 16;
  lc.context = 32;
  diff::ParamSet lm_params;
  lm::LmArchitecture(lc).add_params(lm_params, false, seed);
  const lm::FrozenLM lm(lc, lm_params);

  sys::ModelConfig mc;
  mc.encoder.d_in = 4;
  mc.encoder.front_channels = 6;
  mc.encoder.d_model = 6;
  mc.encoder.layers = 1;
  mc.encoder.kernel = 3;
  mc.encoder.d_ff = 8;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  train::Example ex;
  ex.features.resize(44, mc.encoder.d_in);  // 11 frames after the front-end
  for (Eigen::Index i = 0; i < ex.features.size(); ++i) ex.features.data()[i] = normal(rng);
  ex.transcript = lm::vocab().encode("abc");
  ex.task = lm::Task::Reverse;
  ex.target = data::reverse_text(ex.transcript);

  train::TrainConfig asr;
  train::TrainConfig few = asr;
  few.regime = train::Regime::FewShot;

  std::vector<NamedReport> out;
  auto check = [&](const std::string& name, System s, const train::TrainConfig& tc, const train::Example& e) {
    diff::ParamSet params = sys::make_params(s, mc, lc, seed + out.size() + 1);
    diff::LossFn loss = [&](diff::Tape& tape, diff::Binder& bind) {
      diff::Binder lm_bind(tape, lm.params());
      return train::objective(s, tape, bind, lm_bind, lm, mc, e, tc).loss;
    };
    out.push_back({name, diff::finite_diff_check(loss, params, 1e-5, 0, seed)});
  };
  train::Example asr_ex = ex;
  asr_ex.task = lm::Task::Transcribe;
  asr_ex.target = ex.transcript;
  check("asr-train objective", System::Wav2Prompt, asr, asr_ex);
  check("few-shot objective", System::Wav2Prompt, few, ex);
  check("encoder-llm cross-entropy", System::EncoderLlm, asr, asr_ex);
  check("ctc", System::Cascade, asr, asr_ex);
  return out;
}

bool write_gradcheck(const cfg::ExperimentConfig& c, const std::vector<NamedReport>& reports, double tol) {
  ordered_json j{{"tolerance", tol}, {"checks", ordered_json::array()}};
  bool ok = true;
  for (const auto& r : reports) {
    ordered_json jr{{"name", r.name},
                    {"max_rel_error", r.report.max_rel_error()},
                    {"checked", r.report.checked()},
                    {"passed", r.report.passed(tol)},
                    {"params", ordered_json::array()}};
    for (const auto& p : r.report.params)
      jr["params"].push_back({{"name", p.name},
                              {"checked", p.checked},
                              {"max_rel_error", p.max_rel_error},
                              {"max_abs_error", p.max_abs_error}});
    ok = ok && r.report.passed(tol);
    j["checks"].push_back(jr);
  }
  j["passed"] = ok;
  write_text(fs::path(c.out_dir) / "gradcheck.json", j.dump(2) + "\n");
  return ok;
}

}  // namespace w2p::exp
