#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "w2p/lm.hpp"
#include "w2p/parallel.hpp"
#include "w2p/synthdata.hpp"
#include "w2p/systems.hpp"
#include "w2p/training.hpp"

namespace w2p::cfg {

// Everything the LM fixture and the datasets depend on. Fixed across model
// seeds, so one fixture serves every run.
struct FixtureConfig {
  data::DataConfig data;
  lm::LmConfig lm;
  int pretrain_epochs = 12;
  int pretrain_batch = 32;
  double pretrain_lr = 3e-3;
  double pretrain_final_lr = 3e-4;
  std::size_t pretrain_heldout = 100;  // held-out sentences for perplexity
  std::uint64_t lm_seed = 7;
  double competence_threshold = 95.0;  // percent exact match per task
  std::size_t competence_limit = 1000;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;  // model init and shuffling
  FixtureConfig fixture;
  std::string fixture_dir = "fixtures";
  std::string out_dir = "runs";
  sys::System system = sys::System::Wav2Prompt;
  sys::ModelConfig model;
  train::TrainConfig asr;       // asr-train stage of wav2prompt and encoder-llm
  train::TrainConfig ctc;       // CTC model of the cascade
  train::TrainConfig finetune;  // few-shot stage
  lm::DecodeConfig decode;
  std::vector<lm::Task> eval_tasks{lm::kAllTasks.begin(), lm::kAllTasks.end()};
  std::size_t eval_limit = 0;  // 0 evaluates the whole split
  par::Exec exec = par::Exec::OpenMP;
};

// Defaults with the per-stage training settings filled in.
ExperimentConfig default_config();

nlohmann::ordered_json to_json(const ExperimentConfig& c);
nlohmann::ordered_json to_json(const FixtureConfig& c);
// Missing keys keep their defaults; unknown keys throw UsageError.
ExperimentConfig from_json(const nlohmann::json& j);

ExperimentConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const ExperimentConfig& c);

// Named sub-seeds drawn from the master seed.
enum class SeedStream : std::uint64_t { Init = 101, Shuffle = 102, CtcInit = 103, CtcShuffle = 104 };
std::uint64_t sub_seed(const ExperimentConfig& c, SeedStream s);

}  // namespace w2p::cfg
