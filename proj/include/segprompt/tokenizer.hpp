#pragma once

#include <json.hpp>

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace segprompt::mllm {

/// Closed-vocabulary word tokenizer. Text is lowercased and split on whitespace;
/// the punctuation marks , . : ; ( ) become separate words.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Tokenizer();
  /// Vocabulary = specials followed by the sorted distinct words of `corpus`.
  static Tokenizer build(const std::vector<std::string>& corpus);
  static Tokenizer from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(words_.size()); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace segprompt::mllm
