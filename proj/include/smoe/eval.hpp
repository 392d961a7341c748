#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/rng.hpp"
#include "smoe/tokenizer.hpp"
#include "smoe/trainer.hpp"
#include "smoe/transformer.hpp"

namespace smoe {

// Prompt template (byte-level; one char = one token):
//   prompt = filler_prefix
//          + "the pass key is " + <key> + ". "
//          + filler_suffix
//          + "the pass key is "
//   answer = <key>
// The trailing cue is the retrieval question; the expected completion is the
// key itself. Filler is seeded pseudo-random sentences with no digit runs, so
// the key appears exactly once and exact-match scoring is unambiguous.
inline constexpr const char* kPasskeyCue = "the pass key is ";

struct PasskeySpec {
  std::size_t context_len = 128;  // total prompt+answer budget in tokens
  double position_frac = 0.5;     // where the sentinel sits inside the filler span
  std::string alphabet = "0123456789";
  std::size_t key_len = 4;
  std::uint64_t filler_seed = 0;

  void validate() const {
    if (position_frac < 0.0 || position_frac > 1.0)
      throw ConfigError("PasskeySpec: position_frac must be in [0,1]");
    if (key_len == 0 || alphabet.empty()) throw ConfigError("PasskeySpec: empty key or alphabet");
  }
};

struct PasskeyPrompt {
  std::string prompt;
  std::string key;
};

namespace detail {

// Natural-ish filler of exactly `len` chars: short lowercase sentences drawn
// from a digit-free word bank, truncated at the requested length.
inline std::string make_filler(Rng& rng, std::size_t len) {
  static const char* bank[] = {"amber", "birch", "cedar",  "delta", "ember",  "fjord",
                               "grove", "harbor", "inlet", "maple", "north",  "orchid",
                               "pine",  "quartz", "reef",  "stone", "tide",   "vale",
                               "willow", "zephyr", "river", "cloud", "meadow", "slate"};
  constexpr std::size_t kBank = sizeof(bank) / sizeof(bank[0]);
  std::string out;
  while (out.size() < len) {
    const std::size_t words = 3 + static_cast<std::size_t>(rng.next_below(4));
    for (std::size_t w = 0; w < words && out.size() < len; ++w) {
      out += bank[rng.next_below(kBank)];
      out.push_back(' ');
    }
    if (out.size() + 1 < len) {
      out.back() = '.';
      out.push_back(' ');
    }
  }
  out.resize(len);
  return out;
}

}  // namespace detail

// Deterministic given (spec, seed): the same pair always yields the same
// prompt and key.
inline PasskeyPrompt generate_passkey_prompt(const PasskeySpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::string cue = kPasskeyCue;
  const std::size_t sentinel_len = cue.size() + spec.key_len + 2;  // "...<key>. "
  const std::size_t question_len = cue.size();
  const std::size_t prompt_len = spec.context_len - spec.key_len;
  if (spec.context_len < spec.key_len + sentinel_len + question_len)
    throw ConfigError("PasskeySpec: context too small for sentinel + question");
  const std::size_t filler_total = prompt_len - sentinel_len - question_len;

  Rng rng = Rng(spec.filler_seed).split(seed);
  std::string key;
  for (std::size_t i = 0; i < spec.key_len; ++i)
    key.push_back(spec.alphabet[static_cast<std::size_t>(rng.next_below(spec.alphabet.size()))]);

  const std::size_t prefix_len = static_cast<std::size_t>(
      std::llround(spec.position_frac * static_cast<double>(filler_total)));
  const std::size_t suffix_len = filler_total - prefix_len;

  PasskeyPrompt out;
  out.key = key;
  out.prompt = detail::make_filler(rng, prefix_len) + cue + key + ". " +
               detail::make_filler(rng, suffix_len) + cue;
  return out;
}

// Training documents: BOS + prompt + key + EOS, byte-level. Context lengths
// are drawn uniformly from `context_lens` (repeat entries to weight them);
// positions are uniform in [0,1].
inline std::vector<std::vector<int>> make_passkey_corpus(
    const std::vector<std::size_t>& context_lens, std::size_t n_docs, std::size_t key_len,
    std::uint64_t seed) {
  if (context_lens.empty()) throw ConfigError("make_passkey_corpus: no context lengths");
  ByteTokenizer tok;
  std::vector<std::vector<int>> docs;
  docs.reserve(n_docs);
  Rng root = Rng(seed).split(0x70617373ULL);  // "pass"
  for (std::size_t i = 0; i < n_docs; ++i) {
    Rng rng = root.split(i);
    PasskeySpec spec;
    spec.context_len = context_lens[static_cast<std::size_t>(rng.next_below(context_lens.size()))];
    spec.position_frac = rng.next_double();
    spec.key_len = key_len;
    spec.filler_seed = seed;
    PasskeyPrompt p = generate_passkey_prompt(spec, rng.next_u64());
    docs.push_back(tok.encode(p.prompt + p.key, /*add_bos=*/true, /*add_eos=*/true));
  }
  return docs;
}

// Accuracy matrix over (context length, insertion position) cells.
struct RetrievalGrid {
  std::vector<std::size_t> context_lens;
  std::vector<double> position_fracs;
  std::vector<std::vector<double>> accuracy;  // [context][position]

  double min_accuracy() const {
    double mn = 1.0;
    for (const auto& row : accuracy)
      for (double a : row) mn = std::min(mn, a);
    return mn;
  }
};

// Decoder under test: given prompt text, greedily produce `max_chars` chars.
using PasskeyDecoder = std::function<std::string(const std::string& prompt, std::size_t max_chars)>;

// Exact-match retrieval accuracy per grid cell over seeded trials.
inline RetrievalGrid passkey_eval(const PasskeyDecoder& decode,
                                  const std::vector<std::size_t>& context_lens,
                                  const std::vector<double>& position_fracs, std::size_t trials,
                                  std::size_t key_len, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("passkey_eval: trials must be positive");
  RetrievalGrid grid;
  grid.context_lens = context_lens;
  grid.position_fracs = position_fracs;
  grid.accuracy.assign(context_lens.size(), std::vector<double>(position_fracs.size(), 0.0));
  for (std::size_t ci = 0; ci < context_lens.size(); ++ci) {
    for (std::size_t pi = 0; pi < position_fracs.size(); ++pi) {
      std::size_t correct = 0;
      for (std::size_t trial = 0; trial < trials; ++trial) {
        PasskeySpec spec;
        spec.context_len = context_lens[ci];
        spec.position_frac = position_fracs[pi];
        spec.key_len = key_len;
        spec.filler_seed = seed;
        const std::uint64_t trial_seed = (ci * 0x10001ULL + pi) * 0x3e5ULL + trial + 1;
        PasskeyPrompt p = generate_passkey_prompt(spec, trial_seed);
        if (decode(p.prompt, p.key.size()) == p.key) ++correct;
      }
      grid.accuracy[ci][pi] = static_cast<double>(correct) / static_cast<double>(trials);
    }
  }
  return grid;
}

// Wraps a model as a PasskeyDecoder: BOS + prompt bytes, greedy decode.
template <typename S>
PasskeyDecoder model_decoder(const TransformerModel<S>& model) {
  return [&model](const std::string& prompt, std::size_t max_chars) {
    ByteTokenizer tok;
    std::vector<int> ids = tok.encode(prompt, /*add_bos=*/true, /*add_eos=*/false);
    std::vector<int> out = decode_greedy(model, ids, max_chars);
    return tok.decode(std::vector<int>(out.end() - static_cast<std::ptrdiff_t>(max_chars),
                                       out.end()));
  };
}

inline void write_retrieval_grid(const RetrievalGrid& grid, std::ostream& out) {
  out << "context";
  for (double f : grid.position_fracs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "\tpos%.2f", f);
    out << buf;
  }
  out << "\n";
  for (std::size_t ci = 0; ci < grid.context_lens.size(); ++ci) {
    out << grid.context_lens[ci];
    for (double a : grid.accuracy[ci]) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "\t%.4f", a);
      out << buf;
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Perplexity vs. context size

// exp(mean cross-entropy) over non-overlapping windows of each size; every
// window is prefixed with BOS so all of its positions are scored against
// their window prefix.
template <typename S>
std::vector<std::pair<std::size_t, double>> perplexity_vs_context(
    const TransformerModel<S>& model, const std::vector<int>& corpus,
    const std::vector<std::size_t>& sizes) {
  std::size_t max_size = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("perplexity_vs_context: window size must be positive");
    if (s + 1 > model.config.context_len)
      throw ConfigError("perplexity_vs_context: window exceeds model context");
    max_size = std::max(max_size, s);
  }
  if (corpus.size() < max_size)
    throw DataError("perplexity_vs_context: corpus shorter than largest window");

  std::vector<std::pair<std::size_t, double>> table;
  for (std::size_t s : sizes) {
    double total_ce = 0.0;
    std::size_t scored = 0;
    for (std::size_t off = 0; off + s <= corpus.size(); off += s) {
      std::vector<int> ids;
      ids.reserve(s + 1);
      ids.push_back(ByteTokenizer::kBos);
      ids.insert(ids.end(), corpus.begin() + static_cast<std::ptrdiff_t>(off),
                 corpus.begin() + static_cast<std::ptrdiff_t>(off + s));
      ForwardResult<S> r = forward(model, ids);
      std::vector<int> targets(ids.begin() + 1, ids.end());
      total_ce += static_cast<double>(cross_entropy(r.logits, targets)) *
                  static_cast<double>(targets.size());
      scored += targets.size();
    }
    table.emplace_back(s, std::exp(total_ce / static_cast<double>(scored)));
  }
  return table;
}

// Strictly periodic corpus: `pattern` repeated to total_len bytes.
inline std::vector<int> make_periodic_corpus(const std::string& pattern, std::size_t total_len) {
  if (pattern.empty()) throw ConfigError("make_periodic_corpus: empty pattern");
  ByteTokenizer tok;
  std::string text;
  text.reserve(total_len);
  while (text.size() < total_len) text += pattern;
  text.resize(total_len);
  return tok.encode(text);
}

inline void write_perplexity_table(const std::vector<std::pair<std::size_t, double>>& table,
                                   std::ostream& out) {
  out << "window\tperplexity\n";
  for (const auto& [s, ppl] : table) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu\t%.6f\n", s, ppl);
    out << buf;
  }
}

}  // namespace smoe
