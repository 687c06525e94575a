#pragma once

// Few-shot example sets used to score candidate models. Two example forms:
//   decoder: {"input": str, "target": str}
//   encoder: {"query": str, "pos": [str], "neg": [str]}
// stored one JSON object per line. Text is tokenized at the byte level
// (token id == byte value), which keeps fixtures tokenizer-free.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"

namespace cocktail {

enum class ExampleKind { Decoder, Encoder };

struct DecoderExample {
  std::string input;
  std::string target;
};

struct EncoderExample {
  std::string query;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};

struct FewShotSet {
  std::string task_id;
  ExampleKind kind = ExampleKind::Decoder;
  std::vector<DecoderExample> decoder_examples;
  std::vector<EncoderExample> encoder_examples;

  std::size_t size() const {
    return kind == ExampleKind::Decoder ? decoder_examples.size() : encoder_examples.size();
  }

  void validate() const {
    if (size() == 0) throw validation_error("few-shot set \"" + task_id + "\" is empty");
    for (const DecoderExample& e : decoder_examples) {
      if (e.target.empty()) {
        throw validation_error("few-shot set \"" + task_id + "\" has an example with an empty target");
      }
    }
    for (const EncoderExample& e : encoder_examples) {
      if (e.positives.empty()) {
        throw validation_error("few-shot set \"" + task_id + "\" has an example with no positives");
      }
    }
  }
};

inline std::vector<int> byte_tokenize(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

inline FewShotSet load_examples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open \"" + path.string() + "\"");
  FewShotSet set;
  set.task_id = path.stem().string();
  bool first = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const bool is_decoder = row.contains("input") || row.contains("target");
    const bool is_encoder = row.contains("query");
    if (is_decoder == is_encoder) {
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": row is neither a decoder nor an encoder example");
    }
    const ExampleKind kind = is_decoder ? ExampleKind::Decoder : ExampleKind::Encoder;
    if (first) {
      set.kind = kind;
      first = false;
    } else if (kind != set.kind) {
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": mixed decoder and encoder rows in one file");
    }
    try {
      if (kind == ExampleKind::Decoder) {
        DecoderExample e;
        e.input = row.value("input", "");
        e.target = row.at("target").get<std::string>();
        set.decoder_examples.push_back(std::move(e));
      } else {
        EncoderExample e;
        e.query = row.at("query").get<std::string>();
        e.positives = row.at("pos").get<std::vector<std::string>>();
        if (row.contains("neg")) e.negatives = row.at("neg").get<std::vector<std::string>>();
        set.encoder_examples.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  set.validate();
  return set;
}

// The unified-model pool: all tasks' examples concatenated in input order.
inline FewShotSet pool_examples(const std::vector<FewShotSet>& sets) {
  if (sets.empty()) throw validation_error("nothing to pool");
  FewShotSet out;
  out.task_id = "unified";
  out.kind = sets.front().kind;
  for (const FewShotSet& s : sets) {
    if (s.kind != out.kind) {
      throw validation_error("cannot pool decoder and encoder example sets together");
    }
    out.decoder_examples.insert(out.decoder_examples.end(), s.decoder_examples.begin(),
                                s.decoder_examples.end());
    out.encoder_examples.insert(out.encoder_examples.end(), s.encoder_examples.begin(),
                                s.encoder_examples.end());
  }
  out.validate();
  return out;
}

}  // namespace cocktail
