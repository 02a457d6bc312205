#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tempo {

// Word/character hybrid. A piece is a letter run, a single digit or a single
// other character, each optionally carrying one leading space; a space that
// precedes nothing mergeable is a piece of its own. Decoding concatenates
// pieces, so encode∘decode is the identity on any text the vocabulary covers.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kVis = 3;

  static std::vector<std::string> split(const std::string& text);
  // Vocabulary = specials, digits and basic punctuation, then every piece in
  // `texts` in sorted order.
  static Tokenizer fit(const std::vector<std::string>& texts);

  // Throws ValidationError on a piece outside the vocabulary.
  std::vector<int> encode(const std::string& text) const;
  // Special tokens are skipped.
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return pieces_.size(); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(const std::string& piece) const;
  const std::vector<std::string>& pieces() const { return pieces_; }

  std::string to_json() const;
  static Tokenizer from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  bool operator==(const Tokenizer& other) const { return pieces_ == other.pieces_; }

 private:
  explicit Tokenizer(std::vector<std::string> pieces);
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace tempo
