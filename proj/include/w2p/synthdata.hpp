#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "w2p/lm.hpp"
#include "w2p/matrix.hpp"
#include "w2p/vocab.hpp"

// The synthetic world: a word grammar over 26 letters and space, text tasks
// on its sentences, an instruction corpus for LM pretraining and a
// pseudo-speech rendering of token sequences.
namespace w2p::data {

using lm::Task;
using lm::Tokens;

struct GrammarConfig {
  int min_chars = 3;
  int max_chars = 12;
  int filler_words = 40;
  int filler_min_len = 2;
  int filler_max_len = 4;
  int keywords = 8;
  int keyword_len = 3;
  int max_fillers = 3;
};

// Lexicon fixed by seed. Words never repeat a letter back to back, so a
// sentence has no two equal adjacent symbols.
struct Grammar {
  GrammarConfig config;
  std::vector<Tokens> fillers;
  std::vector<Tokens> keywords;
  std::vector<int> keyword_label;  // keyword index -> intent label in [0, 4)

  static Grammar make(const GrammarConfig& cfg, std::uint64_t seed);
  // Index of the keyword contained in `sentence`, or -1.
  int find_keyword(const Tokens& sentence) const;
};

// Every sentence holds exactly one keyword, chosen uniformly, plus filler
// words; a draw that overflows max_chars resamples only the fillers, so the
// keyword distribution stays uniform. Returns `size` distinct sentences.
std::vector<Tokens> gen_text_corpus(const Grammar& g, std::uint64_t seed, std::size_t size);

// Task answers.
Tokens reverse_text(const Tokens& s);
Tokens cipher_text(const Tokens& s, int shift = 3);  // letters only, cyclic
Tokens task_answer(const Grammar& g, Task task, const Tokens& sentence);

// prefix | sentence | postfix | [sos] answer [eos], loss on answer + [eos].
lm::LmExample render_instruction(const Grammar& g, Task task, const Tokens& sentence);
// One line per task for each sentence, tasks interleaved.
std::vector<lm::LmExample> gen_instruction_corpus(const Grammar& g,
                                                  const std::vector<Tokens>& sentences);

struct PseudoSpeechSpec {
  int d_in = 16;
  int min_duration = 20;  // raw frames per token, inclusive
  int max_duration = 36;
  double noise = 0.1;
  double offset_scale = 0.05;
  Matrix codebook;  // vocab x d_in

  static PseudoSpeechSpec make(std::uint64_t seed, int vocab_size = lm::Vocabulary::kSize,
                               int d_in = 16);
  double min_prototype_distance() const;
};

// Per token: a duration drawn from [min_duration, max_duration], that many
// copies of its prototype plus N(0, noise^2) plus a per-utterance offset.
// Throws DegenerateInputError on an empty sequence.
Matrix render_pseudo_speech(const Tokens& tokens, const PseudoSpeechSpec& spec,
                            std::uint64_t seed);

// Nearest-prototype label of every frame.
std::vector<int> classify_frames(const Matrix& frames, const PseudoSpeechSpec& spec);
// Collapses runs of equal labels.
Tokens collapse_runs(const std::vector<int>& labels);

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0);

enum class Split { AsrTrain, FewShot, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Record {
  int id = 0;
  Task task = Task::Transcribe;
  Tokens input;   // the spoken sentence
  Tokens target;  // task answer, no [eos]
  int template_id = 0;
  std::uint64_t speech_seed = 0;
};

struct SplitSizes {
  std::size_t asr_train = 8000;
  std::size_t few_shot = 200;
  std::size_t test = 1000;
};

struct DataConfig {
  std::uint64_t seed = 1234;
  GrammarConfig grammar;
  SplitSizes splits;
  std::size_t lm_train_sentences = 12000;
  std::size_t lm_heldout_sentences = 500;
  int d_in = 16;
  int min_duration = 20;
  int max_duration = 36;
  double noise = 0.1;
  double offset_scale = 0.05;
};

// Everything derived from one DataConfig: grammar, speech spec and the
// disjoint sentence pools for the task splits and for LM pretraining.
struct World {
  DataConfig config;
  Grammar grammar;
  PseudoSpeechSpec speech;
  std::vector<Tokens> asr_train, few_shot, test;
  std::vector<Tokens> lm_train, lm_heldout;

  static World build(const DataConfig& cfg);
  const std::vector<Tokens>& sentences(Split s) const;
};

struct TaskDataset {
  Task task = Task::Transcribe;
  Split split = Split::Test;
  std::vector<Record> records;
};

// Transcribe provides all three splits; the other tasks only few-shot and
// test (asking for their asr-train split throws UsageError).
TaskDataset build_task_dataset(const World& world, Task task, Split split);

Matrix features(const World& world, const Record& r);

// Throws IntegrityError if any sentence occurs in two splits.
void check_disjoint(const World& world);

// Manifest (one JSON record per line) plus a frame blob of shape-prefixed
// little-endian doubles. Records of the same sentence share blob offsets.
void write_dataset(const World& world, const TaskDataset& ds,
                   const std::filesystem::path& manifest, const std::filesystem::path& blob);

struct LoadedRecord {
  Record record;
  Matrix features;
};
std::vector<LoadedRecord> read_dataset(const std::filesystem::path& manifest,
                                       const std::filesystem::path& blob);

}  // namespace w2p::data
