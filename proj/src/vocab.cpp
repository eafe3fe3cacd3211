#include "w2p/vocab.hpp"

#include "w2p/errors.hpp"

namespace w2p::lm {

Vocabulary::Vocabulary() {
  symbols_ = {"[pad]", "[sos]", "[eos]"};
  for (char c = 'a'; c <= 'z'; ++c) symbols_.emplace_back(1, c);
  symbols_.emplace_back(" ");
  for (const char* s : {"[rep]", "[rev]", "[cip]", "[int]", "[cls]"}) symbols_.emplace_back(s);
  for (int k = 0; k < kNumLabels; ++k) symbols_.push_back("[L" + std::to_string(k) + "]");
  symbols_.emplace_back("[sep]");
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (id < 0 || id >= size()) throw UsageError("unknown token id " + std::to_string(id));
  return symbols_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view symbol) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    if (symbols_[i] == symbol) return static_cast<TokenId>(i);
  throw UsageError("unknown symbol '" + std::string(symbol) + "'");
}

Tokens Vocabulary::encode(std::string_view text) const {
  Tokens out;
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '[') {
      const auto close = text.find(']', i);
      if (close == std::string_view::npos) throw UsageError("unterminated special token");
      out.push_back(id(text.substr(i, close - i + 1)));
      i = close + 1;
    } else {
      out.push_back(id(text.substr(i, 1)));
      ++i;
    }
  }
  return out;
}

std::string Vocabulary::decode(const Tokens& tokens) const {
  std::string s;
  for (TokenId t : tokens) s += symbol(t);
  return s;
}

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Transcribe:
      return "transcribe";
    case Task::Reverse:
      return "reverse";
    case Task::Cipher:
      return "cipher";
    case Task::Intent:
      return "intent";
  }
  return "?";
}

Task parse_task(std::string_view s) {
  for (Task t : kAllTasks)
    if (to_string(t) == s) return t;
  throw UsageError("unknown task: " + std::string(s));
}

const std::vector<PromptTemplate>& all_templates() {
  using V = Vocabulary;
  static const std::vector<PromptTemplate> templates = {
      {0, "transcribe", {}, {V::kRepeat}},
      {1, "reverse", {}, {V::kReverse}},
      {2, "cipher", {}, {V::kCipher}},
      {3, "intent", {V::kClassify}, {V::kIntent}},
  };
  return templates;
}

const PromptTemplate& template_for(Task t) { return all_templates()[static_cast<std::size_t>(t)]; }

const PromptTemplate& template_by_id(int id) {
  for (const auto& t : all_templates())
    if (t.id == id) return t;
  throw UsageError("unknown template id " + std::to_string(id));
}

Tokens render_prompt(const PromptTemplate& tpl, const Tokens& payload) {
  Tokens out = tpl.prefix;
  out.insert(out.end(), payload.begin(), payload.end());
  out.insert(out.end(), tpl.postfix.begin(), tpl.postfix.end());
  out.push_back(Vocabulary::kSos);
  return out;
}

}  // namespace w2p::lm
