#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "w2p/config.hpp"
#include "w2p/gradcheck.hpp"
#include "w2p/lm.hpp"
#include "w2p/metrics.hpp"
#include "w2p/synthdata.hpp"
#include "w2p/training.hpp"

// Orchestration shared by the command-line tool and the acceptance suite.
// Every function writes its outputs under the configured directories and
// produces identical bytes for identical configs.
namespace w2p::exp {

using Log = std::function<void(const std::string&)>;

// --- Fixture: datasets plus the pretrained, frozen LM ----------------------

struct Fixture {
  data::World world;
  lm::FrozenLM lm;
  nlohmann::ordered_json meta;  // perplexity, competence, checksum, seed
};

std::filesystem::path lm_fixture_path(const cfg::ExperimentConfig& c);
std::filesystem::path lm_meta_path(const cfg::ExperimentConfig& c);

// Oracle-LLM exact match (percent) per task on held-out test sentences.
std::map<lm::Task, double> text_competence(const data::World& world, const lm::FrozenLM& lm,
                                           const cfg::ExperimentConfig& c);

// Builds the world, writes every task dataset, pretrains the LM and writes
// the fixture with its metadata. Throws IntegrityError, after writing the
// metadata with "usable": false, when competence is below threshold.
Fixture build_fixture(const cfg::ExperimentConfig& c, const Log& log);

// Reads and verifies the fixture: checksum, recorded fixture config equal
// to c.fixture, usable flag. Throws IntegrityError otherwise.
Fixture load_fixture(const cfg::ExperimentConfig& c);

// load_fixture, or build_fixture when no fixture file exists yet.
Fixture ensure_fixture(const cfg::ExperimentConfig& c, const Log& log);

// --- Checkpoints -----------------------------------------------------------

struct Checkpoint {
  sys::System system = sys::System::Wav2Prompt;
  std::string stage;  // "asr-train", "ctc-init" or "few-shot:<task>"
  diff::ParamSet params;
  train::OptimizerState optimizer;
  std::uint64_t lm_checksum = 0;
  int epoch = 0;
  nlohmann::ordered_json config;
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
// Throws IntegrityError when the file is damaged or was trained against a
// different LM.
Checkpoint load_checkpoint(const std::filesystem::path& path, const lm::FrozenLM& lm);

// <out>/<system>.ckpt, or <out>/<system>.<task>.ckpt after fine-tuning.
std::filesystem::path checkpoint_path(const cfg::ExperimentConfig& c, sys::System s,
                                      std::optional<lm::Task> finetuned = std::nullopt);

// --- Commands --------------------------------------------------------------

// Trains `c.system` on transcribe/asr-train. The cascade trains its CTC
// model; encoder-llm initializes its encoder from the CTC checkpoint,
// training that first if absent; flat-start only takes the CTC
// initialization. Returns nullopt for the oracle.
std::optional<Checkpoint> train_system(const cfg::ExperimentConfig& c, const Fixture& fx,
                                       const Log& log);

// Few-shot fine-tuning of the system's base checkpoint on `task`.
Checkpoint finetune_system(const cfg::ExperimentConfig& c, const Fixture& fx, lm::Task task,
                           const Log& log);

struct EvalResult {
  metrics::Summary summary;
  std::vector<lm::Tokens> outputs;
  std::filesystem::path file;
};

// Generates answers for every record of the split with the task template.
// Uses `checkpoint` if given, else the system's base checkpoint.
EvalResult evaluate(const cfg::ExperimentConfig& c, const Fixture& fx, sys::System s,
                    lm::Task task, data::Split split,
                    std::optional<std::filesystem::path> checkpoint, const Log& log);

struct AblationRow {
  double gamma = 0.0;
  std::map<lm::Task, metrics::Summary> zero_shot;
};

// Trains wav2prompt with gamma = 20 and gamma = 0 on identical seeds and
// compares zero-shot reverse and cipher. Writes ablation.txt/.json.
std::vector<AblationRow> ablate(const cfg::ExperimentConfig& c, const Fixture& fx,
                                const Log& log);

struct NamedReport {
  std::string name;
  diff::GradReport report;
};

// Finite-difference checks on tiny instances: the asr-train objective, the
// few-shot objective, Encoder-LLM cross-entropy and CTC.
std::vector<NamedReport> gradcheck_suite(std::uint64_t seed);

// Writes gradcheck.json under out_dir; true when every check is below tol.
bool write_gradcheck(const cfg::ExperimentConfig& c, const std::vector<NamedReport>& reports,
                     double tol);

}  // namespace w2p::exp
