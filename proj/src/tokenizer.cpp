#include "segprompt/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace segprompt::mllm {

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_punct(char c) { return c == ',' || c == '.' || c == ':' || c == ';' || c == '(' || c == ')'; }

}  // namespace

Tokenizer::Tokenizer() : words_(kSpecials) {
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus)
    for (auto& w : split(text)) words.insert(std::move(w));
  Tokenizer t;
  for (const auto& w : words) {
    if (t.index_.count(w)) continue;
    t.index_[w] = static_cast<int>(t.words_.size());
    t.words_.push_back(w);
  }
  return t;
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  const auto words = j.at("vocabulary").get<std::vector<std::string>>();
  if (words.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), words.begin()))
    throw std::runtime_error("tokenizer vocabulary must start with the special tokens");
  Tokenizer t;
  t.words_ = words;
  t.index_.clear();
  for (std::size_t i = 0; i < words.size(); ++i)
    if (!t.index_.emplace(words[i], static_cast<int>(i)).second)
      throw std::runtime_error("tokenizer vocabulary has duplicate word '" + words[i] + "'");
  return t;
}

nlohmann::json Tokenizer::to_json() const { return {{"vocabulary", words_}}; }

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split(text)) ids.push_back(id(w));
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

int Tokenizer::id(const std::string& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? kUnk : it->second;
}

}  // namespace segprompt::mllm
