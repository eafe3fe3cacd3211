#include "w2p/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "w2p/errors.hpp"

namespace w2p::data {

using lm::Vocabulary;

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream) {
  // splitmix64 over the combined key.
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1) + 0xbf58476d1ce4e5b9ULL * stream;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

Tokens random_word(std::mt19937_64& rng, int len) {
  std::uniform_int_distribution<int> letter(0, 25);
  Tokens w;
  while (static_cast<int>(w.size()) < len) {
    const lm::TokenId t = Vocabulary::kFirstLetter + letter(rng);
    if (!w.empty() && w.back() == t) continue;
    w.push_back(t);
  }
  return w;
}

}  // namespace

Grammar Grammar::make(const GrammarConfig& cfg, std::uint64_t seed) {
  if (cfg.keywords % Vocabulary::kNumLabels != 0)
    throw UsageError("keyword count must be a multiple of the label count");
  Grammar g;
  g.config = cfg;
  std::mt19937_64 rng(seed);
  std::set<Tokens> used;
  while (static_cast<int>(g.keywords.size()) < cfg.keywords) {
    Tokens w = random_word(rng, cfg.keyword_len);
    if (used.insert(w).second) g.keywords.push_back(std::move(w));
  }
  std::uniform_int_distribution<int> flen(cfg.filler_min_len, cfg.filler_max_len);
  while (static_cast<int>(g.fillers.size()) < cfg.filler_words) {
    Tokens w = random_word(rng, flen(rng));
    if (used.insert(w).second) g.fillers.push_back(std::move(w));
  }
  for (int k = 0; k < cfg.keywords; ++k) g.keyword_label.push_back(k % Vocabulary::kNumLabels);
  std::shuffle(g.keyword_label.begin(), g.keyword_label.end(), rng);
  return g;
}

int Grammar::find_keyword(const Tokens& sentence) const {
  // Split on spaces and look each word up.
  Tokens word;
  auto check = [&](const Tokens& w) -> int {
    for (std::size_t k = 0; k < keywords.size(); ++k)
      if (keywords[k] == w) return static_cast<int>(k);
    return -1;
  };
  for (lm::TokenId t : sentence) {
    if (t == Vocabulary::kSpace) {
      if (int k = check(word); k >= 0) return k;
      word.clear();
    } else {
      word.push_back(t);
    }
  }
  return check(word);
}

std::vector<Tokens> gen_text_corpus(const Grammar& g, std::uint64_t seed, std::size_t size) {
  const GrammarConfig& cfg = g.config;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_kw(0, static_cast<int>(g.keywords.size()) - 1);
  std::uniform_int_distribution<int> pick_n(0, cfg.max_fillers);
  std::uniform_int_distribution<int> pick_filler(0, static_cast<int>(g.fillers.size()) - 1);

  std::vector<Tokens> out;
  std::set<Tokens> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 200 * size + 1000;
  while (out.size() < size) {
    if (++attempts > max_attempts)
      throw DegenerateInputError("gen_text_corpus: grammar cannot produce enough distinct sentences");
    const int kw = pick_kw(rng);
    Tokens sentence;
    while (true) {
      const int n = pick_n(rng);
      std::uniform_int_distribution<int> pick_slot(0, n);
      const int slot = pick_slot(rng);
      std::vector<const Tokens*> words;
      for (int i = 0; i < n; ++i) words.push_back(&g.fillers[static_cast<std::size_t>(pick_filler(rng))]);
      words.insert(words.begin() + slot, &g.keywords[static_cast<std::size_t>(kw)]);
      sentence.clear();
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) sentence.push_back(Vocabulary::kSpace);
        sentence.insert(sentence.end(), words[i]->begin(), words[i]->end());
      }
      const int len = static_cast<int>(sentence.size());
      if (len >= cfg.min_chars && len <= cfg.max_chars) break;
    }
    if (seen.insert(sentence).second) out.push_back(std::move(sentence));
  }
  return out;
}

Tokens reverse_text(const Tokens& s) { return Tokens(s.rbegin(), s.rend()); }

Tokens cipher_text(const Tokens& s, int shift) {
  Tokens out;
  out.reserve(s.size());
  for (lm::TokenId t : s) {
    if (Vocabulary::is_letter(t))
      out.push_back(Vocabulary::kFirstLetter + (t - Vocabulary::kFirstLetter + shift % 26 + 26) % 26);
    else
      out.push_back(t);
  }
  return out;
}

Tokens task_answer(const Grammar& g, Task task, const Tokens& sentence) {
  switch (task) {
    case Task::Transcribe:
      return sentence;
    case Task::Reverse:
      return reverse_text(sentence);
    case Task::Cipher:
      return cipher_text(sentence);
    case Task::Intent: {
      const int k = g.find_keyword(sentence);
      if (k < 0) throw DegenerateInputError("intent: sentence has no keyword");
      return {Vocabulary::label(g.keyword_label[static_cast<std::size_t>(k)])};
    }
  }
  return {};
}

lm::LmExample render_instruction(const Grammar& g, Task task, const Tokens& sentence) {
  lm::LmExample ex;
  ex.tokens = lm::render_prompt(lm::template_for(task), sentence);
  ex.response_begin = static_cast<int>(ex.tokens.size());
  const Tokens answer = task_answer(g, task, sentence);
  ex.tokens.insert(ex.tokens.end(), answer.begin(), answer.end());
  ex.tokens.push_back(Vocabulary::kEos);
  return ex;
}

std::vector<lm::LmExample> gen_instruction_corpus(const Grammar& g,
                                                  const std::vector<Tokens>& sentences) {
  std::vector<lm::LmExample> out;
  out.reserve(sentences.size() * lm::kAllTasks.size());
  for (const auto& s : sentences)
    for (Task t : lm::kAllTasks) out.push_back(render_instruction(g, t, s));
  return out;
}

PseudoSpeechSpec PseudoSpeechSpec::make(std::uint64_t seed, int vocab_size, int d_in) {
  PseudoSpeechSpec spec;
  spec.d_in = d_in;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  spec.codebook.resize(vocab_size, d_in);
  for (Eigen::Index i = 0; i < spec.codebook.size(); ++i) spec.codebook.data()[i] = normal(rng);
  return spec;
}

double PseudoSpeechSpec::min_prototype_distance() const {
  double best = INFINITY;
  for (Eigen::Index i = 0; i < codebook.rows(); ++i)
    for (Eigen::Index j = i + 1; j < codebook.rows(); ++j)
      best = std::min(best, (codebook.row(i) - codebook.row(j)).norm());
  return best;
}

Matrix render_pseudo_speech(const Tokens& tokens, const PseudoSpeechSpec& spec,
                            std::uint64_t seed) {
  if (tokens.empty()) throw DegenerateInputError("render_pseudo_speech: empty token sequence");
  if (spec.min_duration < 1 || spec.max_duration < spec.min_duration)
    throw UsageError("render_pseudo_speech: bad duration range");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> duration(spec.min_duration, spec.max_duration);

  RowVector offset(spec.d_in);
  for (Eigen::Index i = 0; i < offset.size(); ++i) offset(i) = spec.offset_scale * normal(rng);

  std::vector<int> durations(tokens.size());
  int total = 0;
  for (auto& d : durations) total += (d = duration(rng));

  Matrix out(total, spec.d_in);
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (tokens[k] < 0 || tokens[k] >= spec.codebook.rows())
      throw UsageError("render_pseudo_speech: token outside codebook");
    for (int f = 0; f < durations[k]; ++f, ++row) {
      out.row(row) = spec.codebook.row(tokens[k]) + offset;
      for (Eigen::Index c = 0; c < spec.d_in; ++c) out(row, c) += spec.noise * normal(rng);
    }
  }
  return out;
}

std::vector<int> classify_frames(const Matrix& frames, const PseudoSpeechSpec& spec) {
  std::vector<int> labels(static_cast<std::size_t>(frames.rows()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    Eigen::Index best = 0;
    (spec.codebook.rowwise() - frames.row(t)).rowwise().squaredNorm().minCoeff(&best);
    labels[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return labels;
}

Tokens collapse_runs(const std::vector<int>& labels) {
  Tokens out;
  for (int l : labels)
    if (out.empty() || out.back() != l) out.push_back(l);
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::AsrTrain:
      return "asr-train";
    case Split::FewShot:
      return "few-shot";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  for (Split sp : {Split::AsrTrain, Split::FewShot, Split::Test})
    if (to_string(sp) == s) return sp;
  throw UsageError("unknown split: " + s);
}

namespace {

enum Stream : std::uint64_t {
  kGrammarStream = 1,
  kCorpusStream = 2,
  kCodebookStream = 3,
  kPartitionStream = 4,
  kSpeechStream = 10,
};

}  // namespace

World World::build(const DataConfig& cfg) {
  World w;
  w.config = cfg;
  w.grammar = Grammar::make(cfg.grammar, derive_seed(cfg.seed, 0, kGrammarStream));
  w.speech = PseudoSpeechSpec::make(derive_seed(cfg.seed, 0, kCodebookStream),
                                    Vocabulary::kSize, cfg.d_in);
  w.speech.min_duration = cfg.min_duration;
  w.speech.max_duration = cfg.max_duration;
  w.speech.noise = cfg.noise;
  w.speech.offset_scale = cfg.offset_scale;

  const SplitSizes& s = cfg.splits;
  const std::size_t total =
      s.asr_train + s.few_shot + s.test + cfg.lm_train_sentences + cfg.lm_heldout_sentences;
  std::vector<Tokens> all = gen_text_corpus(w.grammar, derive_seed(cfg.seed, 0, kCorpusStream), total);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0, kPartitionStream));
  std::shuffle(all.begin(), all.end(), rng);

  auto take = [&, pos = std::size_t{0}](std::size_t n) mutable {
    std::vector<Tokens> part(all.begin() + static_cast<std::ptrdiff_t>(pos),
                             all.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return part;
  };
  w.asr_train = take(s.asr_train);
  w.few_shot = take(s.few_shot);
  w.test = take(s.test);
  w.lm_train = take(cfg.lm_train_sentences);
  w.lm_heldout = take(cfg.lm_heldout_sentences);
  check_disjoint(w);
  return w;
}

const std::vector<Tokens>& World::sentences(Split s) const {
  switch (s) {
    case Split::AsrTrain:
      return asr_train;
    case Split::FewShot:
      return few_shot;
    case Split::Test:
      return test;
  }
  return test;
}

void check_disjoint(const World& w) {
  std::map<Tokens, int> owner;
  const std::vector<const std::vector<Tokens>*> pools = {&w.asr_train, &w.few_shot, &w.test,
                                                         &w.lm_train, &w.lm_heldout};
  for (std::size_t p = 0; p < pools.size(); ++p)
    for (const auto& s : *pools[p]) {
      auto [it, inserted] = owner.emplace(s, static_cast<int>(p));
      if (!inserted)
        throw IntegrityError("sentence '" + lm::vocab().decode(s) + "' appears in two splits");
    }
}

TaskDataset build_task_dataset(const World& world, Task task, Split split) {
  if (split == Split::AsrTrain && task != Task::Transcribe)
    throw UsageError("only the transcribe task has an asr-train split");
  TaskDataset ds;
  ds.task = task;
  ds.split = split;
  const auto& sentences = world.sentences(split);
  ds.records.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    Record r;
    r.id = static_cast<int>(i);
    r.task = task;
    r.input = sentences[i];
    r.target = task_answer(world.grammar, task, sentences[i]);
    r.template_id = lm::template_for(task).id;
    r.speech_seed = derive_seed(world.config.seed, i, kSpeechStream + static_cast<std::uint64_t>(split));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

Matrix features(const World& world, const Record& r) {
  return render_pseudo_speech(r.input, world.speech, r.speech_seed);
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IntegrityError("dataset blob truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_dataset(const World& world, const TaskDataset& ds, const std::filesystem::path& manifest,
                   const std::filesystem::path& blob) {
  std::ofstream m(manifest, std::ios::binary);
  std::ofstream b(blob, std::ios::binary);
  if (!m || !b) throw UsageError("cannot open dataset output files");
  const auto& v = lm::vocab();
  for (const auto& r : ds.records) {
    const auto offset = static_cast<std::uint64_t>(b.tellp());
    const Matrix f = features(world, r);
    write_u64(b, static_cast<std::uint64_t>(f.rows()));
    write_u64(b, static_cast<std::uint64_t>(f.cols()));
    for (Eigen::Index i = 0; i < f.size(); ++i) write_u64(b, std::bit_cast<std::uint64_t>(f.data()[i]));
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["task"] = lm::to_string(r.task);
    j["tokens"] = v.decode(r.input);
    j["target"] = v.decode(r.target);
    j["template"] = r.template_id;
    j["offset"] = offset;
    j["speech_seed"] = r.speech_seed;
    m << j.dump() << '\n';
  }
}

std::vector<LoadedRecord> read_dataset(const std::filesystem::path& manifest,
                                       const std::filesystem::path& blob) {
  std::ifstream m(manifest);
  std::ifstream b(blob, std::ios::binary);
  if (!m || !b) throw UsageError("cannot open dataset files");
  const auto& v = lm::vocab();
  std::vector<LoadedRecord> out;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    LoadedRecord lr;
    lr.record.id = j.at("id").get<int>();
    lr.record.task = lm::parse_task(j.at("task").get<std::string>());
    lr.record.input = v.encode(j.at("tokens").get<std::string>());
    lr.record.target = v.encode(j.at("target").get<std::string>());
    lr.record.template_id = j.at("template").get<int>();
    lr.record.speech_seed = j.at("speech_seed").get<std::uint64_t>();
    b.seekg(static_cast<std::streamoff>(j.at("offset").get<std::uint64_t>()));
    const auto rows = static_cast<Eigen::Index>(read_u64(b));
    const auto cols = static_cast<Eigen::Index>(read_u64(b));
    lr.features.resize(rows, cols);
    for (Eigen::Index i = 0; i < lr.features.size(); ++i)
      lr.features.data()[i] = std::bit_cast<double>(read_u64(b));
    out.push_back(std::move(lr));
  }
  return out;
}

}  // namespace w2p::data
