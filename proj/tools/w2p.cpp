// Command-line entry point: fixtures, train, finetune, eval, gradcheck, ablate.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "w2p/config.hpp"
#include "w2p/errors.hpp"
#include "w2p/experiment.hpp"

namespace fs = std::filesystem;
using namespace w2p;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIntegrity = 2, kCheckFailed = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string fixtures;
  std::string system;
  std::string task;
  std::string split = "test";
  std::string checkpoint;
  bool finetuned = false;
};

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

cfg::ExperimentConfig resolve(const Options& o) {
  cfg::ExperimentConfig c = o.config.empty() ? cfg::default_config() : cfg::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.fixtures.empty()) c.fixture_dir = o.fixtures;
  if (!o.system.empty()) c.system = sys::parse_system(o.system);
  return c;
}

std::vector<lm::Task> tasks_of(const Options& o, const cfg::ExperimentConfig& c) {
  if (!o.task.empty()) return {lm::parse_task(o.task)};
  return c.eval_tasks;
}

int cmd_fixtures(const cfg::ExperimentConfig& c) {
  cfg::save(fs::path(c.fixture_dir) / "config.json", c);
  exp::build_fixture(c, log_line);
  std::cout << "fixture written to " << exp::lm_fixture_path(c).string() << "\n";
  return kOk;
}

int cmd_train(const cfg::ExperimentConfig& c) {
  const auto fx = exp::load_fixture(c);
  if (auto ck = exp::train_system(c, fx, log_line))
    std::cout << "checkpoint written to " << exp::checkpoint_path(c, c.system).string() << "\n";
  return kOk;
}

int cmd_finetune(const Options& o, const cfg::ExperimentConfig& c) {
  const auto fx = exp::load_fixture(c);
  for (lm::Task t : tasks_of(o, c)) {
    exp::finetune_system(c, fx, t, log_line);
    std::cout << "checkpoint written to " << exp::checkpoint_path(c, c.system, t).string() << "\n";
  }
  return kOk;
}

int cmd_eval(const Options& o, const cfg::ExperimentConfig& c) {
  if (!o.checkpoint.empty() && o.finetuned) throw UsageError("--checkpoint and --finetuned exclude each other");
  const auto split = data::parse_split(o.split);
  const auto tasks = tasks_of(o, c);
  if (!o.checkpoint.empty() && tasks.size() != 1) throw UsageError("--checkpoint needs a single --task");
  const auto fx = exp::load_fixture(c);
  cfg::save(fs::path(c.out_dir) / ("eval-" + sys::to_string(c.system) + ".config.json"), c);
  for (lm::Task t : tasks) {
    if (split == data::Split::AsrTrain && t != lm::Task::Transcribe) continue;
    std::optional<fs::path> ckpt;
    if (!o.checkpoint.empty()) ckpt = o.checkpoint;
    if (o.finetuned) ckpt = exp::checkpoint_path(c, c.system, t);
    const auto r = exp::evaluate(c, fx, c.system, t, split, ckpt, log_line);
    std::cout << r.file.string() << "\n";
  }
  return kOk;
}

int cmd_gradcheck(const cfg::ExperimentConfig& c) {
  constexpr double kTol = 1e-4;
  cfg::save(fs::path(c.out_dir) / "gradcheck.config.json", c);
  const auto reports = exp::gradcheck_suite(c.seed);
  const bool ok = exp::write_gradcheck(c, reports, kTol);
  for (const auto& r : reports)
    std::cout << (r.report.passed(kTol) ? "pass " : "FAIL ") << r.name << ": max relative error "
              << r.report.max_rel_error() << " over " << r.report.checked() << " scalars\n";
  return ok ? kOk : kCheckFailed;
}

int cmd_ablate(const cfg::ExperimentConfig& c) {
  const auto fx = exp::load_fixture(c);
  exp::ablate(c, fx, log_line);
  std::cout << (fs::path(c.out_dir) / "ablation.txt").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech prompts for a frozen character LM"};
  app.require_subcommand(1, 1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--fixtures", o.fixtures, "fixture directory");
    sub->add_option("--system", o.system,
                    "wav2prompt, encoder-llm, flat-start-encoder-llm, cascade or oracle");
  };
  auto* fixtures = app.add_subcommand("fixtures", "build datasets and pretrain the frozen LM");
  auto* train = app.add_subcommand("train", "train a system on the ASR data");
  auto* finetune = app.add_subcommand("finetune", "few-shot fine-tuning on one task");
  auto* eval = app.add_subcommand("eval", "evaluate a system on a task split");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* ablate = app.add_subcommand("ablate", "train with and without the MSE loss");
  for (auto* sub : {fixtures, train, finetune, eval, gradcheck, ablate}) common(sub);
  for (auto* sub : {finetune, eval})
    sub->add_option("--task", o.task, "transcribe, reverse, cipher or intent (default: config list)");
  eval->add_option("--split", o.split, "asr-train, few-shot or test");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");
  eval->add_flag("--finetuned", o.finetuned, "use the task's fine-tuned checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const cfg::ExperimentConfig c = resolve(o);
    if (*fixtures) return cmd_fixtures(c);
    if (*train) return cmd_train(c);
    if (*finetune) return cmd_finetune(o, c);
    if (*eval) return cmd_eval(o, c);
    if (*gradcheck) return cmd_gradcheck(c);
    if (*ablate) return cmd_ablate(c);
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
