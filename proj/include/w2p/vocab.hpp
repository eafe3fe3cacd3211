#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace w2p::lm {

using TokenId = int;
using Tokens = std::vector<TokenId>;

// Character vocabulary with special tokens at fixed leading ids.
//
//   0 [pad]  1 [sos]  2 [eos]  3..28 'a'..'z'  29 ' '
//   30 [rep] 31 [rev] 32 [cip] 33 [int] 34 [cls]
//   35..38 [L0]..[L3] intent labels   39 [sep]
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kSos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kFirstLetter = 3;
  static constexpr TokenId kSpace = 29;
  static constexpr TokenId kRepeat = 30;
  static constexpr TokenId kReverse = 31;
  static constexpr TokenId kCipher = 32;
  static constexpr TokenId kIntent = 33;
  static constexpr TokenId kClassify = 34;
  static constexpr TokenId kFirstLabel = 35;
  static constexpr int kNumLabels = 4;
  static constexpr TokenId kSep = 39;
  static constexpr int kSize = 40;

  Vocabulary();

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(TokenId id) const;
  TokenId id(std::string_view symbol) const;  // throws on unknown

  static bool is_letter(TokenId id) { return id >= kFirstLetter && id < kFirstLetter + 26; }
  static bool is_text(TokenId id) { return is_letter(id) || id == kSpace; }
  static TokenId label(int k) { return kFirstLabel + k; }

  // Plain characters map to their own tokens; "[name]" maps to a special.
  Tokens encode(std::string_view text) const;
  std::string decode(const Tokens& tokens) const;

 private:
  std::vector<std::string> symbols_;
};

const Vocabulary& vocab();

enum class Task { Transcribe, Reverse, Cipher, Intent };
constexpr std::array<Task, 4> kAllTasks = {Task::Transcribe, Task::Reverse, Task::Cipher,
                                           Task::Intent};

std::string to_string(Task t);
Task parse_task(std::string_view s);

// Instruction wrapper around a payload. Rendered as
// prefix | payload | postfix | [sos] response.
struct PromptTemplate {
  int id = 0;
  std::string name;
  Tokens prefix;
  Tokens postfix;
};

const PromptTemplate& template_for(Task t);
const PromptTemplate& template_by_id(int id);  // throws UsageError on unknown id
const std::vector<PromptTemplate>& all_templates();

// prefix | payload | postfix | [sos]
Tokens render_prompt(const PromptTemplate& tpl, const Tokens& payload);

}  // namespace w2p::lm
