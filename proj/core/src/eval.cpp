// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include "dv/eval.hpp"

#include <algorithm>
#include <cmath>

namespace dv {

namespace {

struct SplitAccum {
  size_t edits = 0;
  size_t ref_len = 0;
  double sim_sum = 0.0;
  double mse_sum = 0.0;
  int mse_count = 0;
  int count = 0;

  SplitMetrics finish() const {
    SplitMetrics m;
    m.count = count;
    m.ter = ref_len > 0 ? static_cast<double>(edits) / static_cast<double>(ref_len) : 0.0;
    m.sim = count > 0 ? sim_sum / count : 0.0;
    m.mse = mse_count > 0 ? mse_sum / mse_count : 0.0;
    return m;
  }
};

size_t edit_distance(const std::vector<int>& hyp, const std::vector<int>& ref) {
  // token_error_rate is edits over reference length; recover the raw count
  return static_cast<size_t>(
      std::llround(token_error_rate(hyp, ref) * static_cast<double>(ref.size())));
}

}  // namespace

EvalReport evaluate(const Model<float>& model, const Corpus& corpus, const Oracle& oracle,
                    const EvalOptions& opts) {
  const auto& test = corpus.test;
  if (test.empty()) throw contract_error("evaluate: empty test split");
  const int n_test = static_cast<int>(test.size());
  const int asr_n = opts.asr_items < 0 ? n_test : std::min(opts.asr_items, n_test);
  const int tts_n = opts.tts_items < 0 ? n_test : std::min(opts.tts_items, n_test);

  EvalReport report;

  size_t edits = 0, ref_len = 0;
  int asr_done = 0;
  for (int i = 0; i < asr_n; ++i) {
    DecodeResult dec;
    try {
      dec = greedy_decode(model, test[i].frames, opts.max_decode_len);
    } catch (const capacity_error&) {
      continue;  // item does not fit the model's position window
    }
    edits += edit_distance(dec.tokens, test[i].tokens);
    ref_len += test[i].tokens.size();
    ++asr_done;
  }
  report.asr_count = asr_done;
  report.asr_ter = ref_len > 0 ? static_cast<double>(edits) / static_cast<double>(ref_len) : 0.0;

  SplitAccum seen, unseen;
  for (int i = 0; i < tts_n; ++i) {
    const SynthExample& target = test[i];
    int ref_idx = -1;
    for (int d = 1; d < n_test; ++d) {
      const int j = (i + d) % n_test;
      if (test[j].speaker_id == target.speaker_id) {
        ref_idx = j;
        break;
      }
    }
    if (ref_idx < 0) continue;  // no same-speaker reference available
    const SynthExample& ref = test[ref_idx];

    TtsInferenceRequest req;
    req.ref_text = ref.tokens;
    req.ref_frames = ref.frames;
    req.gen_text = target.tokens;
    req.sampler.nfe = opts.nfe;
    req.sampler.cfg_weight = opts.cfg_weight;
    req.sampler.scheme = opts.scheme;
    req.sampler.seed = substream(opts.seed, 0x5EED0 + static_cast<uint64_t>(i));
    FrameMatrix gen;
    try {
      gen = synthesize(model, req);
    } catch (const capacity_error&) {
      continue;  // request does not fit the model's position window
    }

    OracleDecode dec = oracle.decode(gen);
    SplitAccum& acc = target.speaker_id < corpus.spec.n_seen() ? seen : unseen;
    acc.edits += edit_distance(dec.tokens, target.tokens);
    acc.ref_len += target.tokens.size();
    acc.sim_sum += oracle.speaker_similarity(gen, ref.frames);
    if (gen.same_shape(target.frames)) {
      double se = 0.0;
      for (size_t k = 0; k < gen.v.size(); ++k) {
        const double d = static_cast<double>(gen.v[k]) - target.frames.v[k];
        se += d * d;
      }
      acc.mse_sum += se / static_cast<double>(gen.v.size());
      acc.mse_count += 1;
    }
    acc.count += 1;
  }

  report.seen = seen.finish();
  report.unseen = unseen.finish();
  SplitAccum overall;
  overall.edits = seen.edits + unseen.edits;
  overall.ref_len = seen.ref_len + unseen.ref_len;
  overall.sim_sum = seen.sim_sum + unseen.sim_sum;
  overall.mse_sum = seen.mse_sum + unseen.mse_sum;
  overall.mse_count = seen.mse_count + unseen.mse_count;
  overall.count = seen.count + unseen.count;
  report.overall = overall.finish();
  return report;
}

}  // namespace dv
