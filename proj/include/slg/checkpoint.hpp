#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "slg/backbone.hpp"
#include "slg/common.hpp"
#include "slg/speechprior.hpp"

namespace slg {

// ---------------------------------------------------------------------------
// Versioned named-tensor container: magic "SGCK", meta strings, then raw
// little-endian tensors. Everything round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr char kCkptMagic[4] = {'S', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

class Checkpoint {
 public:
  enum DType : std::uint8_t { F64 = 0, U64 = 1 };

  struct Tensor {
    std::string name;
    DType dtype = F64;
    std::uint64_t count = 0;
    std::vector<unsigned char> bytes;
  };

  void set_meta(const std::string& key, const std::string& value) {
    meta_[key] = value;
  }
  const std::string& meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw errf("checkpoint: missing meta key '%s'", key.c_str());
    return it->second;
  }
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }

  void add_f64(const std::string& name, const double* p, std::uint64_t n) {
    Tensor t;
    t.name = name;
    t.dtype = F64;
    t.count = n;
    t.bytes.resize(n * sizeof(double));
    std::memcpy(t.bytes.data(), p, t.bytes.size());
    push(std::move(t));
  }

  void add_u64(const std::string& name, const std::uint64_t* p, std::uint64_t n) {
    Tensor t;
    t.name = name;
    t.dtype = U64;
    t.count = n;
    t.bytes.resize(n * sizeof(std::uint64_t));
    std::memcpy(t.bytes.data(), p, t.bytes.size());
    push(std::move(t));
  }

  bool has_tensor(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& tensor(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw errf("checkpoint: missing tensor '%s'", name.c_str());
    return tensors_[it->second];
  }

  void read_f64(const std::string& name, double* out, std::uint64_t n) const {
    const Tensor& t = tensor(name);
    if (t.dtype != F64) throw errf("checkpoint: tensor '%s' is not f64", name.c_str());
    if (t.count != n)
      throw errf("checkpoint: dimension mismatch for tensor '%s': expected %llu values, found %llu",
                 name.c_str(), static_cast<unsigned long long>(n),
                 static_cast<unsigned long long>(t.count));
    std::memcpy(out, t.bytes.data(), t.bytes.size());
  }

  void read_u64(const std::string& name, std::uint64_t* out, std::uint64_t n) const {
    const Tensor& t = tensor(name);
    if (t.dtype != U64) throw errf("checkpoint: tensor '%s' is not u64", name.c_str());
    if (t.count != n)
      throw errf("checkpoint: dimension mismatch for tensor '%s': expected %llu values, found %llu",
                 name.c_str(), static_cast<unsigned long long>(n),
                 static_cast<unsigned long long>(t.count));
    std::memcpy(out, t.bytes.data(), t.bytes.size());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw errf("cannot write checkpoint: %s", path.string().c_str());
    out.write(kCkptMagic, 4);
    write_u32(out, kCkptVersion);
    write_u32(out, static_cast<std::uint32_t>(meta_.size()));
    for (const auto& [k, v] : meta_) {
      write_str(out, k);
      write_str(out, v);
    }
    write_u32(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& t : tensors_) {
      write_str(out, t.name);
      out.put(static_cast<char>(t.dtype));
      const std::uint64_t n = t.count;
      out.write(reinterpret_cast<const char*>(&n), 8);
      out.write(reinterpret_cast<const char*>(t.bytes.data()),
                static_cast<std::streamsize>(t.bytes.size()));
    }
    if (!out) throw errf("short write on checkpoint: %s", path.string().c_str());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw errf("missing checkpoint: %s", path.string().c_str());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
      throw errf("corrupt checkpoint header (bad magic): %s", path.string().c_str());
    const std::uint32_t version = read_u32(in, path);
    if (version != kCkptVersion)
      throw errf("unsupported checkpoint version %u in %s", version,
                 path.string().c_str());
    Checkpoint ck;
    const std::uint32_t n_meta = read_u32(in, path);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      const std::string k = read_str(in, path);
      const std::string v = read_str(in, path);
      ck.meta_[k] = v;
    }
    const std::uint32_t n_tensors = read_u32(in, path);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
      Tensor t;
      t.name = read_str(in, path);
      const int dt = in.get();
      if (dt != F64 && dt != U64)
        throw errf("corrupt checkpoint: bad dtype for tensor '%s' in %s",
                   t.name.c_str(), path.string().c_str());
      t.dtype = static_cast<DType>(dt);
      std::uint64_t n = 0;
      in.read(reinterpret_cast<char*>(&n), 8);
      if (!in) throw errf("corrupt checkpoint: truncated tensor header in %s",
                          path.string().c_str());
      t.count = n;
      const std::size_t bytes = n * (t.dtype == F64 ? sizeof(double) : sizeof(std::uint64_t));
      t.bytes.resize(bytes);
      in.read(reinterpret_cast<char*>(t.bytes.data()),
              static_cast<std::streamsize>(bytes));
      if (static_cast<std::size_t>(in.gcount()) != bytes)
        throw errf("corrupt checkpoint: tensor '%s' truncated in %s",
                   t.name.c_str(), path.string().c_str());
      ck.push(std::move(t));
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  static std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw errf("corrupt checkpoint: truncated header in %s", path.string().c_str());
    return v;
  }
  static void write_str(std::ofstream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_str(std::ifstream& in, const std::filesystem::path& path) {
    const std::uint32_t n = read_u32(in, path);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw errf("corrupt checkpoint: truncated string in %s", path.string().c_str());
    return s;
  }

  void push(Tensor t) {
    if (index_.count(t.name))
      throw errf("checkpoint: duplicate tensor '%s'", t.name.c_str());
    index_[t.name] = tensors_.size();
    tensors_.push_back(std::move(t));
  }

  std::map<std::string, std::string> meta_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Config <-> meta
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void model_config_to_meta(const ModelConfig& cfg, Checkpoint& ck,
                                 const std::string& prefix) {
  auto seti = [&](const char* k, long v) {
    ck.set_meta(prefix + k, std::to_string(v));
  };
  auto setd = [&](const char* k, double v) {
    ck.set_meta(prefix + k, detail::fmt_double(v));
  };
  seti("d_model", cfg.d_model);
  seti("n_layers", cfg.n_layers);
  seti("n_heads", cfg.n_heads);
  seti("d_ff", cfg.d_ff);
  seti("vocab", cfg.vocab);
  seti("max_context", cfg.max_context);
  seti("audio_stride", cfg.audio_stride);
  seti("causal", cfg.causal ? 1 : 0);
  seti("head_outputs", cfg.head_outputs);
  seti("d_w", cfg.d_w);
  seti("lora_rank", cfg.lora_rank);
  setd("lora_alpha", cfg.lora_alpha);
  std::string targets;
  for (const auto& t : cfg.lora_targets) {
    if (!targets.empty()) targets += ",";
    targets += t;
  }
  ck.set_meta(prefix + "lora_targets", targets);
  setd("pe_scale", cfg.pe_scale);
  setd("embed_init", cfg.embed_init);
  setd("qk_init", cfg.qk_init);
  setd("v_init", cfg.v_init);
  setd("o_init", cfg.o_init);
  setd("ff_in_init", cfg.ff_in_init);
  setd("ff_out_init", cfg.ff_out_init);
  setd("adapter_init", cfg.adapter_init);
  setd("projector_init", cfg.projector_init);
  setd("lora_a_init", cfg.lora_a_init);
  setd("head_bias_init", cfg.head_bias_init);
  ck.set_meta(prefix + "seed", std::to_string(cfg.seed));
}

inline ModelConfig model_config_from_meta(const Checkpoint& ck,
                                          const std::string& prefix) {
  ModelConfig cfg;
  auto geti = [&](const char* k) { return std::stol(ck.meta(prefix + k)); };
  auto getd = [&](const char* k) { return std::stod(ck.meta(prefix + k)); };
  cfg.d_model = static_cast<int>(geti("d_model"));
  cfg.n_layers = static_cast<int>(geti("n_layers"));
  cfg.n_heads = static_cast<int>(geti("n_heads"));
  cfg.d_ff = static_cast<int>(geti("d_ff"));
  cfg.vocab = static_cast<int>(geti("vocab"));
  cfg.max_context = static_cast<int>(geti("max_context"));
  cfg.audio_stride = static_cast<int>(geti("audio_stride"));
  cfg.causal = geti("causal") != 0;
  cfg.head_outputs = static_cast<int>(geti("head_outputs"));
  cfg.d_w = static_cast<int>(geti("d_w"));
  cfg.lora_rank = static_cast<int>(geti("lora_rank"));
  cfg.lora_alpha = getd("lora_alpha");
  cfg.lora_targets.clear();
  {
    const std::string& s = ck.meta(prefix + "lora_targets");
    std::size_t start = 0;
    while (start < s.size()) {
      std::size_t comma = s.find(',', start);
      if (comma == std::string::npos) comma = s.size();
      if (comma > start) cfg.lora_targets.push_back(s.substr(start, comma - start));
      start = comma + 1;
    }
  }
  cfg.pe_scale = getd("pe_scale");
  cfg.embed_init = getd("embed_init");
  cfg.qk_init = getd("qk_init");
  cfg.v_init = getd("v_init");
  cfg.o_init = getd("o_init");
  cfg.ff_in_init = getd("ff_in_init");
  cfg.ff_out_init = getd("ff_out_init");
  cfg.adapter_init = getd("adapter_init");
  cfg.projector_init = getd("projector_init");
  cfg.lora_a_init = getd("lora_a_init");
  cfg.head_bias_init = getd("head_bias_init");
  cfg.seed = std::stoull(ck.meta(prefix + "seed"));
  return cfg;
}

inline void encoder_config_to_meta(const EncoderConfig& cfg, Checkpoint& ck,
                                   const std::string& prefix) {
  ck.set_meta(prefix + "d_feat", std::to_string(cfg.d_feat));
  ck.set_meta(prefix + "d_w", std::to_string(cfg.d_w));
  ck.set_meta(prefix + "weight_scale", detail::fmt_double(cfg.weight_scale));
  ck.set_meta(prefix + "seed", std::to_string(cfg.seed));
}

inline EncoderConfig encoder_config_from_meta(const Checkpoint& ck,
                                              const std::string& prefix) {
  EncoderConfig cfg;
  cfg.d_feat = static_cast<int>(std::stol(ck.meta(prefix + "d_feat")));
  cfg.d_w = static_cast<int>(std::stol(ck.meta(prefix + "d_w")));
  cfg.weight_scale = std::stod(ck.meta(prefix + "weight_scale"));
  cfg.seed = std::stoull(ck.meta(prefix + "seed"));
  return cfg;
}

// ---------------------------------------------------------------------------
// Model / encoder / APP save + load
// ---------------------------------------------------------------------------

inline void save_model(Checkpoint& ck, GraderModel& model,
                       const std::string& prefix = "") {
  model_config_to_meta(model.config(), ck, prefix + "model.");
  for (const auto& r : model.frozen_parameters())
    ck.add_f64(prefix + "frozen." + r.name, r.data, r.n);
  for (const auto& r : model.trainable_parameters())
    ck.add_f64(prefix + "param." + r.name, r.data, r.n);
}

inline GraderModel load_model(const Checkpoint& ck,
                              const std::string& prefix = "") {
  const ModelConfig cfg = model_config_from_meta(ck, prefix + "model.");
  GraderModel model(cfg);
  for (const auto& r : model.frozen_parameters())
    ck.read_f64(prefix + "frozen." + r.name, r.data, r.n);
  for (const auto& r : model.trainable_parameters())
    ck.read_f64(prefix + "param." + r.name, r.data, r.n);
  return model;
}

inline void save_encoder(Checkpoint& ck, const FrozenEncoder& enc,
                         const std::string& prefix = "") {
  encoder_config_to_meta(enc.config(), ck, prefix + "encoder.");
  ck.add_f64(prefix + "encoder.w", enc.weights().a.data(), enc.weights().a.size());
  ck.add_f64(prefix + "encoder.b", enc.bias().data(), enc.bias().size());
}

inline FrozenEncoder load_encoder(const Checkpoint& ck,
                                  const std::string& prefix = "") {
  const EncoderConfig cfg = encoder_config_from_meta(ck, prefix + "encoder.");
  FrozenEncoder enc(cfg);
  Mat w(static_cast<std::size_t>(cfg.d_w), static_cast<std::size_t>(cfg.d_feat));
  std::vector<double> b(static_cast<std::size_t>(cfg.d_w));
  ck.read_f64(prefix + "encoder.w", w.a.data(), w.a.size());
  ck.read_f64(prefix + "encoder.b", b.data(), b.size());
  enc.set_weights(std::move(w), std::move(b));
  return enc;
}

inline void save_app_bundle(Checkpoint& ck, const AppBundle& bundle,
                            const std::string& prefix = "") {
  save_encoder(ck, bundle.encoder, prefix);
  ck.set_meta(prefix + "app.hidden", std::to_string(bundle.hidden));
  const AppMlp& mlp = bundle.mlp;
  ck.add_f64(prefix + "app.w1", mlp.w1().a.data(), mlp.w1().a.size());
  ck.add_f64(prefix + "app.b1", mlp.b1().data(), mlp.b1().size());
  ck.add_f64(prefix + "app.w2", mlp.w2().a.data(), mlp.w2().a.size());
  ck.add_f64(prefix + "app.b2", mlp.b2().data(), mlp.b2().size());
}

inline AppBundle load_app_bundle(const Checkpoint& ck,
                                 const std::string& prefix = "") {
  const EncoderConfig enc_cfg = encoder_config_from_meta(ck, prefix + "encoder.");
  const int hidden = static_cast<int>(std::stol(ck.meta(prefix + "app.hidden")));
  AppBundle bundle(enc_cfg, hidden, /*init_seed=*/0);
  {
    Mat w(static_cast<std::size_t>(enc_cfg.d_w), static_cast<std::size_t>(enc_cfg.d_feat));
    std::vector<double> b(static_cast<std::size_t>(enc_cfg.d_w));
    ck.read_f64(prefix + "encoder.w", w.a.data(), w.a.size());
    ck.read_f64(prefix + "encoder.b", b.data(), b.size());
    bundle.encoder.set_weights(std::move(w), std::move(b));
  }
  AppMlp& mlp = bundle.mlp;
  ck.read_f64(prefix + "app.w1", mlp.w1().a.data(), mlp.w1().a.size());
  ck.read_f64(prefix + "app.b1", mlp.b1().data(), mlp.b1().size());
  ck.read_f64(prefix + "app.w2", mlp.w2().a.data(), mlp.w2().a.size());
  ck.read_f64(prefix + "app.b2", mlp.b2().data(), mlp.b2().size());
  return bundle;
}

}  // namespace slg
