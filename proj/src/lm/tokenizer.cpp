#include "tempo/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tempo/tensor.hpp"

namespace tempo {
namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<vis>"};

bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!index_.emplace(pieces_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate vocabulary piece '" + pieces_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (pieces_.size() <= i || pieces_[i] != kSpecials[i]) throw ValidationError("vocabulary lacks special tokens");
  }
}

std::vector<std::string> Tokenizer::split(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    if (text[j] == ' ' && j + 1 < text.size() && text[j + 1] != ' ') ++j;
    if (text[j] == ' ') {
      out.emplace_back(" ");
      i = j + 1;
      continue;
    }
    std::size_t end = j + 1;
    if (is_letter(text[j])) {
      while (end < text.size() && is_letter(text[end])) ++end;
    }
    out.push_back(text.substr(i, end - i));
    i = end;
  }
  return out;
}

Tokenizer Tokenizer::fit(const std::vector<std::string>& texts) {
  std::vector<std::string> pieces = kSpecials;
  std::set<std::string> base;
  for (char c : std::string("0123456789.,?'`")) {
    base.insert(std::string(1, c));
    base.insert(std::string(" ") + c);
  }
  base.insert(" ");
  std::set<std::string> seen;
  for (const auto& t : texts)
    for (auto& p : split(t))
      if (!base.count(p)) seen.insert(std::move(p));
  pieces.insert(pieces.end(), base.begin(), base.end());
  pieces.insert(pieces.end(), seen.begin(), seen.end());
  return Tokenizer(std::move(pieces));
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& p : split(text)) {
    auto it = index_.find(p);
    if (it == index_.end()) throw ValidationError("piece '" + p + "' is not in the vocabulary");
    ids.push_back(it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < static_cast<int>(kSpecials.size())) continue;
    out += piece(id);
  }
  return out;
}

std::optional<int> Tokenizer::find(const std::string& piece) const {
  auto it = index_.find(piece);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Tokenizer::to_json() const { return nlohmann::json{{"pieces", pieces_}}.dump(); }

Tokenizer Tokenizer::from_json(const std::string& text) {
  try {
    return Tokenizer(nlohmann::json::parse(text).at("pieces").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad vocabulary file: ") + e.what());
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace tempo
