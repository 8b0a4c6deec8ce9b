#include "soundstream/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "soundstream/bitstream.hpp"

namespace soundstream {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void floats(std::span<const float> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size_bytes());
  }
  void text(const std::string& s) {
    put(static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void floats(std::span<float> v) {
    need(v.size_bytes());
    std::memcpy(v.data(), b_.data() + pos_, v.size_bytes());
    pos_ += v.size_bytes();
  }
  std::string text() {
    const auto n = get<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(b_.size()));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

void write_tensors(Writer& w, const std::vector<NamedTensor>& tensors) {
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.text(name);
    w.put(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    w.floats(t.data());
  }
}

std::vector<std::pair<std::string, StoredTensor>> read_tensors(Reader& r) {
  const auto count = r.get<std::uint32_t>();
  std::vector<std::pair<std::string, StoredTensor>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.text();
    StoredTensor t;
    const auto ndim = r.get<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) t.shape.push_back(r.get<std::uint32_t>());
    const auto n = shape_numel(t.shape);
    if (n > (std::int64_t{1} << 32)) throw CheckpointError("checkpoint tensor " + name + " is implausibly large");
    t.values.resize(static_cast<std::size_t>(n));
    r.floats(t.values);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void assign_tensors(const std::vector<NamedTensor>& targets,
                    const std::vector<std::pair<std::string, StoredTensor>>& stored, const char* what) {
  if (targets.size() != stored.size()) {
    throw CheckpointError(std::string(what) + ": checkpoint has " + std::to_string(stored.size()) +
                          " tensors, model has " + std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& [name, t] = targets[i];
    const auto& [sname, s] = stored[i];
    if (name != sname) throw CheckpointError(std::string(what) + ": expected tensor " + name + ", found " + sname);
    if (t.shape() != s.shape) {
      throw CheckpointError(std::string(what) + ": shape mismatch for " + name + ": checkpoint " +
                            shape_to_string(s.shape) + ", model " + shape_to_string(t.shape()));
    }
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Tensor t = targets[i].second;
    std::copy(stored[i].second.values.begin(), stored[i].second.values.end(), t.data().begin());
  }
}

void write_model_config(Writer& w, const ModelConfig& c, const RvqOptions& o) {
  w.put(static_cast<std::uint32_t>(c.sample_rate));
  w.put(static_cast<std::uint32_t>(c.enc_channels));
  w.put(static_cast<std::uint32_t>(c.dec_channels));
  w.put(static_cast<std::uint8_t>(c.strides.size()));
  for (int s : c.strides) w.put(static_cast<std::uint32_t>(s));
  w.put(static_cast<std::uint32_t>(c.embedding_dim));
  w.put(static_cast<std::uint32_t>(c.num_quantizers));
  w.put(static_cast<std::uint32_t>(c.codebook_size));
  w.put(static_cast<std::uint8_t>(c.denoise));
  w.put(static_cast<std::uint8_t>(c.condition_site));
  w.put(o.decay);
  w.put(o.epsilon);
  w.put(o.usage_decay);
  w.put(o.dead_threshold);
  w.put(static_cast<std::uint32_t>(o.kmeans_iterations));
  w.put(o.kmeans_tolerance);
}

std::pair<ModelConfig, RvqOptions> read_model_config(Reader& r) {
  ModelConfig c;
  RvqOptions o;
  c.sample_rate = static_cast<int>(r.get<std::uint32_t>());
  c.enc_channels = static_cast<int>(r.get<std::uint32_t>());
  c.dec_channels = static_cast<int>(r.get<std::uint32_t>());
  c.strides.resize(r.get<std::uint8_t>());
  for (auto& s : c.strides) s = static_cast<int>(r.get<std::uint32_t>());
  c.embedding_dim = static_cast<int>(r.get<std::uint32_t>());
  c.num_quantizers = static_cast<int>(r.get<std::uint32_t>());
  c.codebook_size = static_cast<int>(r.get<std::uint32_t>());
  c.denoise = r.get<std::uint8_t>() != 0;
  const auto site = r.get<std::uint8_t>();
  if (site > 1) throw CheckpointError("checkpoint: unknown conditioning site");
  c.condition_site = static_cast<ConditionSite>(site);
  o.decay = r.get<float>();
  o.epsilon = r.get<float>();
  o.usage_decay = r.get<float>();
  o.dead_threshold = r.get<float>();
  o.kmeans_iterations = static_cast<int>(r.get<std::uint32_t>());
  o.kmeans_tolerance = r.get<double>();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  return {c, o};
}

void write_rvq(Writer& w, const ResidualVQ& rvq) {
  w.put(static_cast<std::uint32_t>(rvq.num_layers()));
  w.put(static_cast<std::uint32_t>(rvq.codebook_size()));
  w.put(static_cast<std::uint32_t>(rvq.dim()));
  w.put(static_cast<std::uint8_t>(rvq.initialized()));
  for (int q = 0; q < rvq.num_layers(); ++q) {
    const Codebook& cb = rvq.layer(q);
    w.floats(cb.vectors);
    w.floats(cb.ema_count);
    w.floats(cb.ema_sum);
    w.floats(cb.usage);
  }
}

void read_rvq(Reader& r, ResidualVQ& rvq) {
  const auto layers = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  if (static_cast<int>(layers) != rvq.num_layers() || static_cast<int>(n) != rvq.codebook_size() ||
      static_cast<int>(d) != rvq.dim()) {
    throw CheckpointError("checkpoint: codebook shape mismatch");
  }
  rvq.set_initialized(r.get<std::uint8_t>() != 0);
  for (int q = 0; q < rvq.num_layers(); ++q) {
    Codebook& cb = rvq.layer(q);
    r.floats(cb.vectors);
    r.floats(cb.ema_count);
    r.floats(cb.ema_sum);
    r.floats(cb.usage);
  }
}

void write_disc_config(Writer& w, const DiscriminatorConfig& c) {
  w.put(static_cast<std::uint32_t>(c.wave_scales));
  w.put(static_cast<std::uint32_t>(c.wave_base_channels));
  w.put(static_cast<std::uint32_t>(c.wave_max_channels));
  w.put(static_cast<std::uint32_t>(c.wave_grouped_layers));
  w.put(static_cast<std::uint32_t>(c.stft_window));
  w.put(static_cast<std::uint32_t>(c.stft_hop));
  w.put(static_cast<std::uint8_t>(c.stft_channels.size()));
  for (int ch : c.stft_channels) w.put(static_cast<std::uint32_t>(ch));
  w.put(c.slope);
}

DiscriminatorConfig read_disc_config(Reader& r) {
  DiscriminatorConfig c;
  c.wave_scales = static_cast<int>(r.get<std::uint32_t>());
  c.wave_base_channels = static_cast<int>(r.get<std::uint32_t>());
  c.wave_max_channels = static_cast<int>(r.get<std::uint32_t>());
  c.wave_grouped_layers = static_cast<int>(r.get<std::uint32_t>());
  c.stft_window = static_cast<int>(r.get<std::uint32_t>());
  c.stft_hop = static_cast<int>(r.get<std::uint32_t>());
  c.stft_channels.resize(r.get<std::uint8_t>());
  for (auto& ch : c.stft_channels) ch = static_cast<int>(r.get<std::uint32_t>());
  c.slope = r.get<float>();
  return c;
}

// Parsed sections of a checkpoint, before any model is built.
struct Parsed {
  ModelConfig config;
  RvqOptions rvq_options;
  std::vector<std::pair<std::string, StoredTensor>> weights;
  std::vector<std::uint8_t> rvq_bytes;
  std::optional<DiscriminatorConfig> disc_config;
  std::vector<std::pair<std::string, StoredTensor>> disc_weights;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const CodecModel& model, const Discriminators* disc) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.put(kCheckpointVersion);
  write_model_config(w, model.config(), model.rvq.options());
  write_tensors(w, model.parameters());
  write_rvq(w, model.rvq);
  w.put(static_cast<std::uint8_t>(disc != nullptr));
  if (disc) {
    write_disc_config(w, disc->config());
    write_tensors(w, disc->parameters());
  }
  return std::move(w.out);
}

namespace {

Parsed parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  Reader r(bytes.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Parsed p;
  std::tie(p.config, p.rvq_options) = read_model_config(r);
  p.weights = read_tensors(r);
  // The codebook section is re-serialised so it can be applied to a model
  // built later.
  Writer rv;
  const auto layers = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  const auto init = r.get<std::uint8_t>();
  rv.put(layers);
  rv.put(n);
  rv.put(d);
  rv.put(init);
  std::vector<float> buf(static_cast<std::size_t>(std::uint64_t{layers} * (2ull * n * d + 2ull * n)));
  r.floats(buf);
  rv.floats(buf);
  p.rvq_bytes = std::move(rv.out);
  if (r.get<std::uint8_t>() != 0) {
    p.disc_config = read_disc_config(r);
    p.disc_weights = read_tensors(r);
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return p;
}

void apply(const Parsed& p, CodecModel& model) {
  // Validate the codebook shape on a scratch copy so a mismatch leaves the
  // model untouched.
  ResidualVQ rvq = model.rvq;
  Reader rr(p.rvq_bytes);
  read_rvq(rr, rvq);
  assign_tensors(model.parameters(), p.weights, "checkpoint");
  model.rvq = std::move(rvq);
}

}  // namespace

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  const Parsed p = parse(bytes);
  Checkpoint ck{CodecModel(p.config, 0, p.rvq_options), std::nullopt};
  apply(p, ck.model);
  if (p.disc_config) {
    try {
      ck.discriminators.emplace(*p.disc_config, 0);
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint: invalid discriminator config: ") + e.what());
    }
    assign_tensors(ck.discriminators->parameters(), p.disc_weights, "checkpoint discriminators");
  }
  return ck;
}

void save_checkpoint(const CodecModel& model, const std::string& path, const Discriminators* disc) {
  write_file(path, serialize_checkpoint(model, disc));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

void load_weights(CodecModel& model, const std::string& path) {
  try {
    apply(parse(read_file(path)), model);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

void copy_weights(const CodecModel& from, CodecModel& to) {
  const auto bytes = serialize_checkpoint(from);
  apply(parse(bytes), to);
}

}  // namespace soundstream
