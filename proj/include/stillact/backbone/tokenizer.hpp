#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"

namespace stillact {

/// Prompt tokenizer. Two schemes cover the supported text towers:
///   - bpe: lowercase word split, byte-pair merges by rank, "</w>" end marker,
///     bos/eos wrapping (the CLIP convention)
///   - unigram: whitespace marker "▁" plus Viterbi segmentation over a
///     scored piece vocabulary (the sentencepiece convention)
class Tokenizer {
 public:
  enum class Scheme { bpe, unigram };

  Scheme scheme = Scheme::bpe;
  std::unordered_map<std::string, int> vocab;                 // piece -> id
  std::map<std::pair<std::string, std::string>, int> merges;  // pair -> rank (bpe)
  std::unordered_map<std::string, double> piece_scores;       // piece -> logprob (unigram)
  int bos_id = -1;
  int eos_id = -1;
  int unk_id = -1;
  std::size_t context_length = 77;
  std::size_t max_piece_len = 1;

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out = scheme == Scheme::bpe ? encode_bpe(text) : encode_unigram(text);
    require(out.size() <= context_length,
            "tokenizer: prompt needs " + std::to_string(out.size()) + " tokens, context is " +
                std::to_string(context_length));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["scheme"] = scheme == Scheme::bpe ? "bpe" : "unigram";
    j["context_length"] = context_length;
    j["bos_id"] = bos_id;
    j["eos_id"] = eos_id;
    j["unk_id"] = unk_id;
    std::vector<std::string> pieces;
    pieces.resize(vocab.size());
    for (const auto& [tok, id] : vocab) {
      require(id >= 0 && static_cast<std::size_t>(id) < pieces.size(),
              "tokenizer: vocab ids must be dense 0..V-1");
      pieces[static_cast<std::size_t>(id)] = tok;
    }
    j["vocab"] = pieces;
    if (scheme == Scheme::bpe) {
      std::vector<std::string> merge_list(merges.size());
      for (const auto& [pair, rank] : merges) merge_list[rank] = pair.first + " " + pair.second;
      j["merges"] = merge_list;
    } else {
      std::vector<double> scores(pieces.size(), -1e9);
      for (const auto& [piece, score] : piece_scores) scores[vocab.at(piece)] = score;
      j["scores"] = scores;
    }
    return j;
  }

  static Tokenizer from_json(const nlohmann::json& j) {
    Tokenizer t;
    t.scheme = j.at("scheme").get<std::string>() == "bpe" ? Scheme::bpe : Scheme::unigram;
    t.context_length = j.at("context_length").get<std::size_t>();
    t.bos_id = j.at("bos_id").get<int>();
    t.eos_id = j.at("eos_id").get<int>();
    t.unk_id = j.at("unk_id").get<int>();
    const auto pieces = j.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      t.vocab[pieces[i]] = static_cast<int>(i);
      t.max_piece_len = std::max(t.max_piece_len, pieces[i].size());
    }
    if (t.scheme == Scheme::bpe) {
      const auto merge_list = j.at("merges").get<std::vector<std::string>>();
      for (std::size_t r = 0; r < merge_list.size(); ++r) {
        const auto space = merge_list[r].find(' ');
        require(space != std::string::npos, "tokenizer: malformed merge '" + merge_list[r] + "'");
        t.merges[{merge_list[r].substr(0, space), merge_list[r].substr(space + 1)}] =
            static_cast<int>(r);
      }
    } else {
      const auto scores = j.at("scores").get<std::vector<double>>();
      require(scores.size() == pieces.size(), "tokenizer: scores/vocab size mismatch");
      for (std::size_t i = 0; i < pieces.size(); ++i) t.piece_scores[pieces[i]] = scores[i];
    }
    return t;
  }

 private:
  static std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
      const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      if (std::isalnum(static_cast<unsigned char>(c))) {
        cur += c;
      } else {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
        if (!std::isspace(static_cast<unsigned char>(c))) words.push_back(std::string(1, c));
      }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
  }

  std::vector<int> encode_bpe(const std::string& text) const {
    std::vector<int> ids;
    if (bos_id >= 0) ids.push_back(bos_id);
    for (const auto& word : split_words(text)) {
      std::vector<std::string> symbols;
      for (std::size_t i = 0; i < word.size(); ++i) symbols.push_back(std::string(1, word[i]));
      symbols.back() += "</w>";
      // repeatedly apply the lowest-ranked adjacent merge
      while (symbols.size() > 1) {
        int best_rank = INT32_MAX;
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
          auto it = merges.find({symbols[i], symbols[i + 1]});
          if (it != merges.end() && it->second < best_rank) {
            best_rank = it->second;
            best_pos = i;
          }
        }
        if (best_rank == INT32_MAX) break;
        symbols[best_pos] += symbols[best_pos + 1];
        symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
      }
      for (const auto& s : symbols) {
        auto it = vocab.find(s);
        if (it != vocab.end()) ids.push_back(it->second);
        else if (unk_id >= 0) ids.push_back(unk_id);
        else throw Error("tokenizer: piece '" + s + "' not in vocab and no unk id");
      }
    }
    if (eos_id >= 0) ids.push_back(eos_id);
    return ids;
  }

  std::vector<int> encode_unigram(const std::string& text) const {
    // sentencepiece-style normalization: lowercase, spaces become U+2581
    static const std::string kMarker = "\xe2\x96\x81";
    std::string norm = kMarker;
    for (char ch : text) {
      const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      if (std::isspace(static_cast<unsigned char>(c))) norm += kMarker;
      else norm += c;
    }
    const std::size_t n = norm.size();
    constexpr double kNegInf = -1e18;
    const double unk_penalty = -20.0;
    std::vector<double> best(n + 1, kNegInf);
    std::vector<std::size_t> back(n + 1, 0);
    std::vector<int> piece_at(n + 1, -1);
    best[0] = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (best[i] == kNegInf) continue;
      for (std::size_t len = 1; len <= std::min(max_piece_len, n - i); ++len) {
        const std::string sub = norm.substr(i, len);
        auto it = piece_scores.find(sub);
        double score;
        int id;
        if (it != piece_scores.end()) {
          score = it->second;
          id = vocab.at(sub);
        } else if (len == 1 && unk_id >= 0) {
          score = unk_penalty;
          id = unk_id;
        } else {
          continue;
        }
        if (best[i] + score > best[i + len]) {
          best[i + len] = best[i] + score;
          back[i + len] = i;
          piece_at[i + len] = id;
        }
      }
    }
    require(best[n] > kNegInf, "tokenizer: cannot segment prompt");
    std::vector<int> ids;
    for (std::size_t pos = n; pos > 0; pos = back[pos]) ids.push_back(piece_at[pos]);
    std::reverse(ids.begin(), ids.end());
    if (eos_id >= 0) ids.push_back(eos_id);
    return ids;
  }
};

}  // namespace stillact
