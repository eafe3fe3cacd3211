#include "w2p/config.hpp"

#include <fstream>
#include <set>

#include "w2p/errors.hpp"

namespace w2p::cfg {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads keys of one JSON object into fields and rejects keys nobody asked
// for, so a misspelt option fails loudly instead of silently defaulting.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: " + path_ + " must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw UsageError("config: unknown key " + path_ + "." + k);
  }

  template <class T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw UsageError("config: bad value for " + path_ + "." + key + ": " + e.what());
    }
  }
  // Sub-object, or nullptr when absent.
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ordered_json put(const data::GrammarConfig& g) {
  return {{"min_chars", g.min_chars},       {"max_chars", g.max_chars},
          {"filler_words", g.filler_words}, {"filler_min_len", g.filler_min_len},
          {"filler_max_len", g.filler_max_len}, {"keywords", g.keywords},
          {"keyword_len", g.keyword_len},   {"max_fillers", g.max_fillers}};
}

void get(const json& j, data::GrammarConfig& g, const std::string& path) {
  Reader r(j, path);
  r.get("min_chars", g.min_chars);
  r.get("max_chars", g.max_chars);
  r.get("filler_words", g.filler_words);
  r.get("filler_min_len", g.filler_min_len);
  r.get("filler_max_len", g.filler_max_len);
  r.get("keywords", g.keywords);
  r.get("keyword_len", g.keyword_len);
  r.get("max_fillers", g.max_fillers);
}

ordered_json put(const data::DataConfig& d) {
  return {{"seed", d.seed},
          {"grammar", put(d.grammar)},
          {"splits",
           {{"asr_train", d.splits.asr_train}, {"few_shot", d.splits.few_shot}, {"test", d.splits.test}}},
          {"lm_train_sentences", d.lm_train_sentences},
          {"lm_heldout_sentences", d.lm_heldout_sentences},
          {"d_in", d.d_in},
          {"min_duration", d.min_duration},
          {"max_duration", d.max_duration},
          {"noise", d.noise},
          {"offset_scale", d.offset_scale}};
}

void get(const json& j, data::DataConfig& d, const std::string& path) {
  Reader r(j, path);
  r.get("seed", d.seed);
  if (auto* g = r.child("grammar")) get(*g, d.grammar, r.path("grammar"));
  if (auto* s = r.child("splits")) {
    Reader rs(*s, r.path("splits"));
    rs.get("asr_train", d.splits.asr_train);
    rs.get("few_shot", d.splits.few_shot);
    rs.get("test", d.splits.test);
  }
  r.get("lm_train_sentences", d.lm_train_sentences);
  r.get("lm_heldout_sentences", d.lm_heldout_sentences);
  r.get("d_in", d.d_in);
  r.get("min_duration", d.min_duration);
  r.get("max_duration", d.max_duration);
  r.get("noise", d.noise);
  r.get("offset_scale", d.offset_scale);
}

ordered_json put(const lm::LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"layers", c.layers},
          {"heads", c.heads},           {"d_ff", c.d_ff},       {"context", c.context}};
}

void get(const json& j, lm::LmConfig& c, const std::string& path) {
  Reader r(j, path);
  r.get("vocab_size", c.vocab_size);
  r.get("d_model", c.d_model);
  r.get("layers", c.layers);
  r.get("heads", c.heads);
  r.get("d_ff", c.d_ff);
  r.get("context", c.context);
}

ordered_json put(const enc::EncoderConfig& e) {
  return {{"d_in", e.d_in},     {"front_channels", e.front_channels}, {"d_model", e.d_model},
          {"layers", e.layers}, {"kernel", e.kernel},                 {"d_ff", e.d_ff},
          {"firing_bias", e.firing_bias}};
}

void get(const json& j, enc::EncoderConfig& e, const std::string& path) {
  Reader r(j, path);
  r.get("d_in", e.d_in);
  r.get("front_channels", e.front_channels);
  r.get("d_model", e.d_model);
  r.get("layers", e.layers);
  r.get("kernel", e.kernel);
  r.get("d_ff", e.d_ff);
  r.get("firing_bias", e.firing_bias);
}

ordered_json put(const train::TrainConfig& t) {
  return {{"regime", train::to_string(t.regime)},
          {"gamma", t.gamma},
          {"mu", t.mu},
          {"learning_rate", t.learning_rate},
          {"final_learning_rate", t.final_learning_rate},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"clip_norm", t.clip_norm},
          {"max_steps", t.max_steps},
          {"validation_limit", t.validation_limit}};
}

void get(const json& j, train::TrainConfig& t, const std::string& path) {
  Reader r(j, path);
  std::string regime = train::to_string(t.regime);
  r.get("regime", regime);
  t.regime = train::parse_regime(regime);
  r.get("gamma", t.gamma);
  r.get("mu", t.mu);
  r.get("learning_rate", t.learning_rate);
  r.get("final_learning_rate", t.final_learning_rate);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("clip_norm", t.clip_norm);
  r.get("max_steps", t.max_steps);
  r.get("validation_limit", t.validation_limit);
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.asr.regime = train::Regime::AsrTrain;
  c.asr.epochs = 20;
  c.asr.learning_rate = 1e-3;
  c.asr.final_learning_rate = 1e-4;
  c.asr.batch_size = 16;

  c.ctc = c.asr;
  c.ctc.epochs = 5;

  c.finetune.regime = train::Regime::FewShot;
  c.finetune.epochs = 50;
  c.finetune.learning_rate = 1e-4;
  c.finetune.final_learning_rate = 1e-5;
  c.finetune.batch_size = 8;
  c.finetune.validation_limit = 0;
  return c;
}

ordered_json to_json(const FixtureConfig& f) {
  return {{"data", put(f.data)},
          {"lm", put(f.lm)},
          {"pretrain",
           {{"epochs", f.pretrain_epochs},
            {"batch_size", f.pretrain_batch},
            {"learning_rate", f.pretrain_lr},
            {"final_learning_rate", f.pretrain_final_lr},
            {"heldout", f.pretrain_heldout}}},
          {"lm_seed", f.lm_seed},
          {"competence_threshold", f.competence_threshold},
          {"competence_limit", f.competence_limit}};
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json tasks = ordered_json::array();
  for (auto t : c.eval_tasks) tasks.push_back(lm::to_string(t));
  return {{"seed", c.seed},
          {"fixture_dir", c.fixture_dir},
          {"out_dir", c.out_dir},
          {"system", sys::to_string(c.system)},
          {"fixture", to_json(c.fixture)},
          {"model",
           {{"encoder", put(c.model.encoder)},
            {"stack", c.model.stack},
            {"threshold", c.model.threshold},
            {"tail", cif::to_string(c.model.tail)}}},
          {"train", {{"asr", put(c.asr)}, {"ctc", put(c.ctc)}, {"finetune", put(c.finetune)}}},
          {"decode",
           {{"beam", c.decode.beam},
            {"repetition_penalty", c.decode.repetition_penalty},
            {"max_length", c.decode.max_length}}},
          {"eval", {{"tasks", tasks}, {"limit", c.eval_limit}}},
          {"exec", par::to_string(c.exec)}};
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c = default_config();
  Reader r(j, "config");
  r.get("seed", c.seed);
  r.get("fixture_dir", c.fixture_dir);
  r.get("out_dir", c.out_dir);
  std::string system = sys::to_string(c.system);
  r.get("system", system);
  c.system = sys::parse_system(system);
  if (auto* f = r.child("fixture")) {
    Reader rf(*f, r.path("fixture"));
    if (auto* d = rf.child("data")) get(*d, c.fixture.data, rf.path("data"));
    if (auto* l = rf.child("lm")) get(*l, c.fixture.lm, rf.path("lm"));
    if (auto* p = rf.child("pretrain")) {
      Reader rp(*p, rf.path("pretrain"));
      rp.get("epochs", c.fixture.pretrain_epochs);
      rp.get("batch_size", c.fixture.pretrain_batch);
      rp.get("learning_rate", c.fixture.pretrain_lr);
      rp.get("final_learning_rate", c.fixture.pretrain_final_lr);
      rp.get("heldout", c.fixture.pretrain_heldout);
    }
    rf.get("lm_seed", c.fixture.lm_seed);
    rf.get("competence_threshold", c.fixture.competence_threshold);
    rf.get("competence_limit", c.fixture.competence_limit);
  }
  if (auto* m = r.child("model")) {
    Reader rm(*m, r.path("model"));
    if (auto* e = rm.child("encoder")) get(*e, c.model.encoder, rm.path("encoder"));
    rm.get("stack", c.model.stack);
    rm.get("threshold", c.model.threshold);
    std::string tail = cif::to_string(c.model.tail);
    rm.get("tail", tail);
    c.model.tail = cif::parse_tail_policy(tail);
  }
  if (auto* t = r.child("train")) {
    Reader rt(*t, r.path("train"));
    if (auto* a = rt.child("asr")) get(*a, c.asr, rt.path("asr"));
    if (auto* a = rt.child("ctc")) get(*a, c.ctc, rt.path("ctc"));
    if (auto* a = rt.child("finetune")) get(*a, c.finetune, rt.path("finetune"));
  }
  if (auto* d = r.child("decode")) {
    Reader rd(*d, r.path("decode"));
    rd.get("beam", c.decode.beam);
    rd.get("repetition_penalty", c.decode.repetition_penalty);
    rd.get("max_length", c.decode.max_length);
  }
  if (auto* e = r.child("eval")) {
    Reader re(*e, r.path("eval"));
    std::vector<std::string> tasks;
    re.get("tasks", tasks);
    if (e->contains("tasks")) {
      c.eval_tasks.clear();
      for (const auto& t : tasks) c.eval_tasks.push_back(lm::parse_task(t));
    }
    re.get("limit", c.eval_limit);
  }
  std::string exec = par::to_string(c.exec);
  r.get("exec", exec);
  c.exec = par::parse_exec(exec);

  if (c.model.encoder.d_in != c.fixture.data.d_in)
    throw UsageError("config: model.encoder.d_in must equal fixture.data.d_in");
  if (c.decode.beam < 1 || c.decode.max_length < 1 || c.decode.repetition_penalty <= 0)
    throw UsageError("config: invalid decode settings");
  return c;
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void save(const std::filesystem::path& path, const ExperimentConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
}

std::uint64_t sub_seed(const ExperimentConfig& c, SeedStream s) {
  return data::derive_seed(c.seed, 0, static_cast<std::uint64_t>(s));
}

}  // namespace w2p::cfg
