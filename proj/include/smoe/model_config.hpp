#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "smoe/error.hpp"

namespace smoe {

// All architecture hyperparameters; the single source of truth for tensor
// shapes and parameter accounting. Config files are flat key-value text with
// exactly these field names.
struct ModelConfig {
  std::uint64_t dim = 0;
  std::uint64_t n_layers = 0;
  std::uint64_t head_dim = 0;
  std::uint64_t hidden_dim = 0;
  std::uint64_t n_heads = 0;
  std::uint64_t n_kv_heads = 0;
  std::uint64_t context_len = 0;
  std::uint64_t vocab_size = 0;
  std::uint64_t num_experts = 0;
  std::uint64_t top_k_experts = 0;

  static const std::vector<std::string>& field_names() {
    static const std::vector<std::string> names = {
        "dim",     "n_layers",    "head_dim",   "hidden_dim",  "n_heads",
        "n_kv_heads", "context_len", "vocab_size", "num_experts", "top_k_experts"};
    return names;
  }

  std::vector<std::uint64_t*> fields() {
    return {&dim,     &n_layers,    &head_dim,   &hidden_dim,  &n_heads,
            &n_kv_heads, &context_len, &vocab_size, &num_experts, &top_k_experts};
  }
  std::vector<const std::uint64_t*> fields() const {
    return {&dim,     &n_layers,    &head_dim,   &hidden_dim,  &n_heads,
            &n_kv_heads, &context_len, &vocab_size, &num_experts, &top_k_experts};
  }

  void validate() const {
    for (std::size_t i = 0; i < fields().size(); ++i) {
      if (*fields()[i] == 0)
        throw ConfigError("ModelConfig: " + field_names()[i] + " must be positive");
    }
    if (n_heads % n_kv_heads != 0)
      throw ConfigError("ModelConfig: n_heads must be a multiple of n_kv_heads");
    if (top_k_experts > num_experts)
      throw ConfigError("ModelConfig: top_k_experts exceeds num_experts");
    if (head_dim % 2 != 0)
      throw ConfigError("ModelConfig: head_dim must be even for rotary embedding");
  }

  std::uint64_t q_width() const { return n_heads * head_dim; }
  std::uint64_t kv_width() const { return n_kv_heads * head_dim; }
};

inline ModelConfig parse_model_config(std::istream& in) {
  ModelConfig cfg;
  std::map<std::string, bool> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped;
    for (char c : line) {
      if (c == '#') break;
      stripped.push_back(c == '=' ? ' ' : c);
    }
    std::istringstream ls(stripped);
    std::string key;
    if (!(ls >> key)) continue;
    std::uint64_t value = 0;
    if (!(ls >> value))
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key value'");
    std::string extra;
    if (ls >> extra)
      throw ConfigError("config line " + std::to_string(line_no) + ": trailing tokens");
    bool known = false;
    const auto& names = ModelConfig::field_names();
    auto ptrs = cfg.fields();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (key == names[i]) {
        if (seen[key]) throw ConfigError("config: duplicate key '" + key + "'");
        *ptrs[i] = value;
        seen[key] = true;
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key '" + key + "'");
  }
  for (const auto& name : ModelConfig::field_names()) {
    if (!seen[name]) throw ConfigError("config: missing key '" + name + "'");
  }
  cfg.validate();
  return cfg;
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return parse_model_config(in);
}

inline void write_model_config(const ModelConfig& cfg, std::ostream& out) {
  const auto& names = ModelConfig::field_names();
  auto ptrs = cfg.fields();
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << " " << *ptrs[i] << "\n";
}

}  // namespace smoe
