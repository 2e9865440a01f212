// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include "dv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace dv {

namespace {

constexpr char kRecordsMagic[4] = {'U', 'V', 'D', 'R'};
constexpr uint32_t kRecordsVersion = 1;

void normalize(std::vector<float>& v) {
  double n = 0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  if (n == 0) throw numeric_error("normalize: zero vector");
  for (float& x : v) x = static_cast<float>(x / n);
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

Codebook build_codebook(const SynthSpec& spec) {
  spec.validate();
  Codebook cb;
  Rng proto_rng(substream(spec.seed, 1));
  cb.prototypes.reserve(spec.vocab_size);
  for (int tok = 0; tok < spec.vocab_size; ++tok) {
    FrameMatrix p(spec.frames_per_token, spec.frame_dim);
    for (int r = 0; r < spec.frames_per_token; ++r) {
      std::vector<float> row(spec.frame_dim);
      for (auto& x : row) x = static_cast<float>(proto_rng.normal());
      normalize(row);
      for (int j = 0; j < spec.frame_dim; ++j) p.at(r, j) = row[j];
    }
    cb.prototypes.push_back(std::move(p));
  }

  Rng offset_rng(substream(spec.seed, 2));
  const int max_attempts = 1000;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<std::vector<float>> offsets(spec.n_speakers);
    for (auto& o : offsets) {
      o.resize(spec.frame_dim);
      for (auto& x : o) x = static_cast<float>(offset_rng.normal());
      normalize(o);
    }
    bool separated = true;
    if (spec.frame_dim >= 16) {
      for (size_t i = 0; i < offsets.size() && separated; ++i)
        for (size_t j = i + 1; j < offsets.size() && separated; ++j)
          if (std::abs(cosine(offsets[i], offsets[j])) > 0.5) separated = false;
    }
    if (separated) {
      cb.speaker_offsets = std::move(offsets);
      return cb;
    }
  }
  throw contract_error("build_codebook: could not draw separated speaker offsets");
}

FrameMatrix render_frames(const SynthSpec& spec, const Codebook& cb,
                          const std::vector<int>& tokens, int speaker_id, Rng& noise_rng) {
  if (speaker_id < 0 || speaker_id >= spec.n_speakers)
    throw contract_error("render_frames: speaker out of range");
  const int r = spec.frames_per_token, d = spec.frame_dim;
  FrameMatrix out(static_cast<int>(tokens.size()) * r, d);
  const auto& off = cb.speaker_offsets[speaker_id];
  for (size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= spec.vocab_size)
      throw contract_error("render_frames: token out of vocabulary");
    const FrameMatrix& proto = cb.prototypes[tokens[t]];
    for (int k = 0; k < r; ++k)
      for (int j = 0; j < d; ++j)
        out.at(static_cast<int>(t) * r + k, j) =
            proto.at(k, j) + off[j] +
            spec.noise_std * static_cast<float>(noise_rng.normal());
  }
  return out;
}

Corpus generate_corpus(const SynthSpec& spec, int n_train, int n_test) {
  spec.validate();
  if (n_train < 0 || n_test < 0) throw config_error("generate_corpus: negative split size");
  Codebook cb = build_codebook(spec);
  Corpus corpus;
  corpus.spec = spec;

  Rng seq_rng(substream(spec.seed, 3));
  Rng noise_rng(substream(spec.seed, 4));

  auto draw_tokens = [&]() {
    int len = seq_rng.uniform_int(4, 16);
    std::vector<int> toks(len);
    for (auto& t : toks) t = seq_rng.uniform_below(spec.content_count());
    toks.push_back(spec.terminal());
    return toks;
  };

  std::set<std::vector<int>> train_set;
  corpus.train.reserve(n_train);
  for (int i = 0; i < n_train; ++i) {
    SynthExample ex;
    ex.tokens = draw_tokens();
    ex.speaker_id = seq_rng.uniform_below(spec.n_seen());
    ex.frames = render_frames(spec, cb, ex.tokens, ex.speaker_id, noise_rng);
    train_set.insert(ex.tokens);
    corpus.train.push_back(std::move(ex));
  }

  corpus.test.reserve(n_test);
  for (int i = 0; i < n_test; ++i) {
    SynthExample ex;
    do {
      ex.tokens = draw_tokens();
    } while (train_set.count(ex.tokens));
    ex.speaker_id = (i % 2 == 0) ? seq_rng.uniform_below(spec.n_seen())
                                 : spec.n_seen() + seq_rng.uniform_below(spec.n_unseen());
    ex.frames = render_frames(spec, cb, ex.tokens, ex.speaker_id, noise_rng);
    corpus.test.push_back(std::move(ex));
  }
  return corpus;
}

std::vector<float> Oracle::estimate_offset(const FrameMatrix& frames,
                                           const std::vector<int>& tokens) const {
  const int r = spec_.frames_per_token, d = spec_.frame_dim;
  std::vector<float> est(d, 0.0f);
  const int blocks = static_cast<int>(tokens.size());
  if (blocks == 0) return est;
  for (int b = 0; b < blocks; ++b) {
    const FrameMatrix& proto = cb_.prototypes[tokens[b]];
    for (int k = 0; k < r; ++k)
      for (int j = 0; j < d; ++j) est[j] += frames.at(b * r + k, j) - proto.at(k, j);
  }
  for (auto& x : est) x /= static_cast<float>(blocks * r);
  return est;
}

OracleDecode Oracle::decode(const FrameMatrix& frames) const {
  if (frames.rows <= 0) throw contract_error("Oracle::decode: empty frames");
  if (frames.cols != spec_.frame_dim) throw dim_error("Oracle::decode: frame width disagrees");
  const int r = spec_.frames_per_token, d = spec_.frame_dim;
  const int blocks = frames.rows / r;  // trailing partial block carries no token

  auto pass = [&](const std::vector<float>& offset) {
    std::vector<int> tokens(blocks);
    for (int b = 0; b < blocks; ++b) {
      double best = std::numeric_limits<double>::infinity();
      int best_tok = 0;
      // null id never renders, so it is not a candidate
      for (int c = 0; c < spec_.vocab_size - 1; ++c) {
        const FrameMatrix& proto = cb_.prototypes[c];
        double cost = 0;
        for (int k = 0; k < r; ++k)
          for (int j = 0; j < d; ++j) {
            double diff = double(frames.at(b * r + k, j)) - offset[j] - proto.at(k, j);
            cost += diff * diff;
          }
        if (cost < best) {
          best = cost;
          best_tok = c;
        }
      }
      tokens[b] = best_tok;
    }
    return tokens;
  };

  std::vector<float> zero(d, 0.0f);
  std::vector<int> first = pass(zero);
  std::vector<float> offset = estimate_offset(frames, first);
  OracleDecode out;
  out.tokens = pass(offset);
  out.speaker_estimate = estimate_offset(frames, out.tokens);
  return out;
}

double Oracle::speaker_similarity(const FrameMatrix& a, const FrameMatrix& b) const {
  OracleDecode da = decode(a);
  OracleDecode db = decode(b);
  return cosine(da.speaker_estimate, db.speaker_estimate);
}

OracleDecode oracle_decode(const FrameMatrix& frames, const SynthSpec& spec) {
  return Oracle(spec).decode(frames);
}

double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw contract_error("token_error_rate: empty reference");
  const size_t n = hyp.size(), m = ref.size();
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(m);
}

namespace {

template <class T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw io_error("corpus: truncated records file");
  return v;
}

void write_example(std::ofstream& f, const SynthExample& ex) {
  write_pod(f, static_cast<uint32_t>(ex.tokens.size()));
  for (int t : ex.tokens) write_pod(f, static_cast<uint32_t>(t));
  write_pod(f, static_cast<uint32_t>(ex.speaker_id));
  write_pod(f, static_cast<uint32_t>(ex.frames.rows));
  write_pod(f, static_cast<uint32_t>(ex.frames.cols));
  f.write(reinterpret_cast<const char*>(ex.frames.v.data()),
          static_cast<std::streamsize>(ex.frames.v.size() * sizeof(float)));
}

SynthExample read_example(std::ifstream& f) {
  SynthExample ex;
  uint32_t ntok = read_pod<uint32_t>(f);
  if (ntok == 0 || ntok > 1u << 20) throw io_error("corpus: implausible token count");
  ex.tokens.resize(ntok);
  for (auto& t : ex.tokens) t = static_cast<int>(read_pod<uint32_t>(f));
  ex.speaker_id = static_cast<int>(read_pod<uint32_t>(f));
  uint32_t rows = read_pod<uint32_t>(f);
  uint32_t cols = read_pod<uint32_t>(f);
  if (rows > 1u << 24 || cols > 1u << 16) throw io_error("corpus: implausible frame extents");
  ex.frames = FrameMatrix(static_cast<int>(rows), static_cast<int>(cols));
  f.read(reinterpret_cast<char*>(ex.frames.v.data()),
         static_cast<std::streamsize>(ex.frames.v.size() * sizeof(float)));
  if (!f) throw io_error("corpus: truncated records file");
  return ex;
}

std::string format_float(float v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("save_corpus: cannot create " + dir);

  std::ofstream spec_file(fs::path(dir) / "spec.txt");
  if (!spec_file) throw io_error("save_corpus: cannot open spec.txt");
  const SynthSpec& s = corpus.spec;
  spec_file << "vocab_size=" << s.vocab_size << "\n"
            << "frames_per_token=" << s.frames_per_token << "\n"
            << "frame_dim=" << s.frame_dim << "\n"
            << "n_speakers=" << s.n_speakers << "\n"
            << "noise_std=" << format_float(s.noise_std) << "\n"
            << "seed=" << s.seed << "\n"
            << "n_train=" << corpus.train.size() << "\n"
            << "n_test=" << corpus.test.size() << "\n";
  if (!spec_file.flush()) throw io_error("save_corpus: failed writing spec.txt");

  std::ofstream rec(fs::path(dir) / "records.bin", std::ios::binary);
  if (!rec) throw io_error("save_corpus: cannot open records.bin");
  rec.write(kRecordsMagic, 4);
  write_pod(rec, kRecordsVersion);
  write_pod(rec, static_cast<uint64_t>(corpus.train.size()));
  write_pod(rec, static_cast<uint64_t>(corpus.test.size()));
  for (const auto& ex : corpus.train) write_example(rec, ex);
  for (const auto& ex : corpus.test) write_example(rec, ex);
  if (!rec.flush()) throw io_error("save_corpus: failed writing records.bin");
}

void save_frames(const FrameMatrix& frames, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("save_frames: cannot open " + path);
  write_pod(f, static_cast<uint32_t>(frames.rows));
  write_pod(f, static_cast<uint32_t>(frames.cols));
  f.write(reinterpret_cast<const char*>(frames.v.data()),
          static_cast<std::streamsize>(frames.v.size() * sizeof(float)));
  if (!f.flush()) throw io_error("save_frames: write failed for " + path);
}

FrameMatrix load_frames(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("load_frames: cannot open " + path);
  uint32_t rows = read_pod<uint32_t>(f);
  uint32_t cols = read_pod<uint32_t>(f);
  if (rows > 1u << 24 || cols > 1u << 16) throw io_error("load_frames: implausible extents");
  FrameMatrix m(static_cast<int>(rows), static_cast<int>(cols));
  f.read(reinterpret_cast<char*>(m.v.data()),
         static_cast<std::streamsize>(m.v.size() * sizeof(float)));
  if (!f) throw io_error("load_frames: truncated file");
  return m;
}

Corpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream spec_file(fs::path(dir) / "spec.txt");
  if (!spec_file) throw io_error("load_corpus: missing spec.txt in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(spec_file, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw io_error("load_corpus: malformed spec line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw io_error("load_corpus: spec.txt missing key " + k);
    return it->second;
  };
  Corpus corpus;
  corpus.spec.vocab_size = std::stoi(need("vocab_size"));
  corpus.spec.frames_per_token = std::stoi(need("frames_per_token"));
  corpus.spec.frame_dim = std::stoi(need("frame_dim"));
  corpus.spec.n_speakers = std::stoi(need("n_speakers"));
  corpus.spec.noise_std = std::stof(need("noise_std"));
  corpus.spec.seed = std::stoull(need("seed"));
  corpus.spec.validate();
  const uint64_t n_train = std::stoull(need("n_train"));
  const uint64_t n_test = std::stoull(need("n_test"));

  std::ifstream rec(fs::path(dir) / "records.bin", std::ios::binary);
  if (!rec) throw io_error("load_corpus: missing records.bin in " + dir);
  char magic[4];
  rec.read(magic, 4);
  if (!rec || std::memcmp(magic, kRecordsMagic, 4) != 0)
    throw io_error("load_corpus: bad records magic");
  if (read_pod<uint32_t>(rec) != kRecordsVersion)
    throw io_error("load_corpus: unsupported records version");
  if (read_pod<uint64_t>(rec) != n_train || read_pod<uint64_t>(rec) != n_test)
    throw io_error("load_corpus: spec.txt and records.bin disagree on split sizes");
  corpus.train.reserve(n_train);
  for (uint64_t i = 0; i < n_train; ++i) corpus.train.push_back(read_example(rec));
  corpus.test.reserve(n_test);
  for (uint64_t i = 0; i < n_test; ++i) corpus.test.push_back(read_example(rec));
  return corpus;
}

}  // namespace dv
