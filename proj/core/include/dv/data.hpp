// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dv/common.hpp"
#include "dv/rng.hpp"

namespace dv {

// Synthetic paired corpus: each token expands to frames_per_token consecutive
// frames built from a shared prototype codebook, shifted by a per-speaker
// offset, plus iid gaussian noise. Everything derives deterministically from
// the spec fields, seed included.
struct SynthSpec {
  int vocab_size = 32;
  int frames_per_token = 4;
  int frame_dim = 16;
  int n_speakers = 8;
  float noise_std = 0.05f;
  uint64_t seed = 1;

  int terminal() const { return terminal_token(vocab_size); }
  int null_id() const { return null_token(vocab_size); }
  int content_count() const { return vocab_size - 2; }
  // the tail quarter of speakers (at least one) is held out of training
  int n_unseen() const { return std::max(1, n_speakers / 4); }
  int n_seen() const { return n_speakers - n_unseen(); }

  void validate() const {
    if (vocab_size < 3) throw config_error("SynthSpec: vocab_size must be at least 3");
    if (frames_per_token <= 0) throw config_error("SynthSpec: frames_per_token must be positive");
    if (frame_dim <= 0) throw config_error("SynthSpec: frame_dim must be positive");
    if (n_speakers < 2) throw config_error("SynthSpec: need at least 2 speakers");
    if (noise_std < 0) throw config_error("SynthSpec: noise_std must be non-negative");
  }
};

struct SynthExample {
  std::vector<int> tokens;  // content tokens then the terminal token
  int speaker_id = 0;
  FrameMatrix frames;  // tokens.size() * frames_per_token rows
};

struct Codebook {
  std::vector<FrameMatrix> prototypes;           // one r x D block per token id
  std::vector<std::vector<float>> speaker_offsets;  // one unit vector per speaker
};

// Deterministic codebook for a spec: unit-norm prototype rows per token and
// unit-norm speaker offsets redrawn until every pair satisfies
// |cos| <= 0.5 whenever frame_dim >= 16.
Codebook build_codebook(const SynthSpec& spec);

FrameMatrix render_frames(const SynthSpec& spec, const Codebook& cb,
                          const std::vector<int>& tokens, int speaker_id, Rng& noise_rng);

struct Corpus {
  SynthSpec spec;
  std::vector<SynthExample> train;
  std::vector<SynthExample> test;
};

// Token sequences: content length uniform in [4, 16], ids uniform over
// content tokens, terminal appended. Train speakers are uniform over the
// seen pool; test examples alternate seen/unseen pools. Test sequences are
// redrawn until absent from the train set.
Corpus generate_corpus(const SynthSpec& spec, int n_train, int n_test);

// Nearest-prototype decoder with speaker-offset estimation: a first pass
// decodes without the offset, estimates the offset from residuals, then a
// second pass decodes with it subtracted. Independent of the model.
struct OracleDecode {
  std::vector<int> tokens;  // includes the detected terminal token
  std::vector<float> speaker_estimate;
};

class Oracle {
 public:
  explicit Oracle(const SynthSpec& spec) : spec_(spec), cb_(build_codebook(spec)) {}
  const Codebook& codebook() const { return cb_; }
  OracleDecode decode(const FrameMatrix& frames) const;
  // mean cosine similarity between per-frame speaker residuals, in [-1, 1]
  double speaker_similarity(const FrameMatrix& a, const FrameMatrix& b) const;

 private:
  std::vector<float> estimate_offset(const FrameMatrix& frames,
                                     const std::vector<int>& tokens) const;
  SynthSpec spec_;
  Codebook cb_;
};

OracleDecode oracle_decode(const FrameMatrix& frames, const SynthSpec& spec);

// Levenshtein distance over token ids divided by reference length.
double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// raw frame container: u32 rows, u32 cols, row-major f32 payload (little endian)
void save_frames(const FrameMatrix& frames, const std::string& path);
FrameMatrix load_frames(const std::string& path);

}  // namespace dv
