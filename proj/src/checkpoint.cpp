#include "ccnn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace ccnn {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'N', 'N'};

std::uint32_t crc_of(const char* data, std::size_t size) {
  return std::uint32_t(crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data), uInt(size)));
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(char(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(char((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(char((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(std::uint32_t(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }

  void table(const std::vector<NamedTensor>& tensors) {
    u32(std::uint32_t(tensors.size()));
    for (const auto& t : tensors) {
      text(t.name);
      u32(std::uint32_t(t.tensor.rank()));
      for (std::size_t d : t.tensor.shape().dims()) u64(d);
      for (float v : t.tensor.values()) f32(v);
    }
  }

  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : p_(data), end_(data + size) {}

  std::uint8_t u8() { return std::uint8_t(*take(1)); }
  std::uint32_t u32() {
    const char* b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint32_t n = u32();
    const char* b = take(n);
    return std::string(b, n);
  }

  std::vector<NamedTensor> table() {
    const std::uint32_t count = u32();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      t.name = text();
      const std::uint32_t rank = u32();
      if (rank == 0 || rank > 8) corrupt("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
      std::vector<std::size_t> dims;
      std::uint64_t numel = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        const std::uint64_t d = u64();
        if (d == 0 || d > remaining() / 4 || numel > remaining() / 4 / d)
          corrupt("tensor '" + t.name + "' dims exceed the file size");
        numel *= d;
        dims.push_back(std::size_t(d));
      }
      std::vector<float> values(numel);
      for (auto& v : values) v = f32();
      t.tensor = Tensor<float>(Shape(std::move(dims)), std::move(values));
      out.push_back(std::move(t));
    }
    return out;
  }

  std::size_t remaining() const { return std::size_t(end_ - p_); }

 private:
  [[noreturn]] static void corrupt(const std::string& why) { fail(ErrorKind::CorruptCheckpoint, why); }

  const char* take(std::size_t n) {
    if (remaining() < n) corrupt("checkpoint is truncated");
    const char* b = p_;
    p_ += n;
    return b;
  }

  const char* p_;
  const char* end_;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(ckpt.format_version);
  w.u32(std::uint32_t(ckpt.class_names.size()));
  for (const auto& name : ckpt.class_names) w.text(name);
  w.text(ckpt.config_snapshot);
  w.f64(ckpt.best_val_loss);
  w.table(ckpt.params);
  w.table(ckpt.buffers);
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    w.u64(o.step);
    w.f64(o.config.lr);
    w.f64(o.config.beta1);
    w.f64(o.config.beta2);
    w.f64(o.config.eps);
    w.f64(o.config.weight_decay);
    w.table(o.first_moments);
    w.table(o.second_moments);
  }
  const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12) fail(ErrorKind::CorruptCheckpoint, "checkpoint is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::CorruptCheckpoint, "bad checkpoint magic");
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.data() + body, 4);
  if (tail.u32() != crc_of(bytes.data(), body)) fail(ErrorKind::CorruptCheckpoint, "checkpoint checksum mismatch");

  ByteReader r(bytes.data() + 4, body - 4);
  Checkpoint c;
  c.format_version = r.u32();
  if (c.format_version != kCheckpointVersion)
    fail(ErrorKind::CorruptCheckpoint, "unsupported checkpoint version " + std::to_string(c.format_version));
  const std::uint32_t classes = r.u32();
  if (classes > r.remaining() / 4) fail(ErrorKind::CorruptCheckpoint, "class count exceeds the file size");
  for (std::uint32_t i = 0; i < classes; ++i) c.class_names.push_back(r.text());
  c.config_snapshot = r.text();
  c.best_val_loss = r.f64();
  c.params = r.table();
  c.buffers = r.table();
  const std::uint8_t has_opt = r.u8();
  if (has_opt > 1) fail(ErrorKind::CorruptCheckpoint, "bad optimizer presence flag");
  if (has_opt) {
    OptimizerState o;
    o.step = r.u64();
    o.config.lr = r.f64();
    o.config.beta1 = r.f64();
    o.config.beta2 = r.f64();
    o.config.eps = r.f64();
    o.config.weight_decay = r.f64();
    o.first_moments = r.table();
    o.second_moments = r.table();
    c.optimizer = std::move(o);
  }
  if (r.remaining() != 0) fail(ErrorKind::CorruptCheckpoint, "trailing bytes before checksum");
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Io, "cannot move checkpoint into place at " + path.string());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint capture_checkpoint(CustomCnn<float>& model, const Adam* optimizer, std::vector<std::string> class_names,
                              std::string config_snapshot, double best_val_loss) {
  Checkpoint c;
  c.class_names = std::move(class_names);
  c.config_snapshot = std::move(config_snapshot);
  c.best_val_loss = best_val_loss;
  const auto params = model.parameters();
  for (const Param<float>* p : params) c.params.push_back({p->name, p->value});
  for (const auto& b : model.buffers()) c.buffers.push_back({b.name, *b.tensor});
  if (optimizer) {
    OptimizerState o;
    o.step = optimizer->step_count();
    o.config = optimizer->config();
    for (const Param<float>* p : params) {
      o.first_moments.push_back({p->name, p->adam_m});
      o.second_moments.push_back({p->name, p->adam_v});
    }
    c.optimizer = std::move(o);
  }
  return c;
}

namespace {

void assign_table(const std::vector<NamedTensor>& table, const std::vector<std::pair<std::string, Tensor<float>*>>& targets,
                  const char* what) {
  if (table.size() != targets.size())
    fail(ErrorKind::Compatibility, std::string(what) + ": checkpoint has " + std::to_string(table.size()) +
                                       " tensors, model has " + std::to_string(targets.size()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& [name, dst] = targets[i];
    if (table[i].name != name)
      fail(ErrorKind::Compatibility, std::string(what) + ": expected tensor '" + name + "', found '" +
                                         table[i].name + "'");
    if (table[i].tensor.shape() != dst->shape())
      fail(ErrorKind::Compatibility, std::string(what) + ": tensor '" + name + "' has shape " +
                                         table[i].tensor.shape().str() + ", model expects " + dst->shape().str());
    *dst = table[i].tensor;
  }
}

}  // namespace

void restore_model(const Checkpoint& ckpt, CustomCnn<float>& model) {
  std::vector<std::pair<std::string, Tensor<float>*>> params, buffers;
  for (Param<float>* p : model.parameters()) params.emplace_back(p->name, &p->value);
  for (auto& b : model.buffers()) buffers.emplace_back(b.name, b.tensor);
  assign_table(ckpt.params, params, "parameters");
  assign_table(ckpt.buffers, buffers, "buffers");
}

Adam restore_optimizer(const Checkpoint& ckpt, CustomCnn<float>& model) {
  if (!ckpt.optimizer) fail(ErrorKind::Compatibility, "checkpoint carries no optimizer state");
  std::vector<std::pair<std::string, Tensor<float>*>> m, v;
  for (Param<float>* p : model.parameters()) {
    m.emplace_back(p->name, &p->adam_m);
    v.emplace_back(p->name, &p->adam_v);
  }
  assign_table(ckpt.optimizer->first_moments, m, "adam first moments");
  assign_table(ckpt.optimizer->second_moments, v, "adam second moments");
  Adam adam(ckpt.optimizer->config);
  adam.set_step_count(ckpt.optimizer->step);
  return adam;
}

CustomCnnConfig model_config_from(const Checkpoint& ckpt) {
  CustomCnnConfig cfg;
  cfg.num_classes = ckpt.class_names.size();
  if (!ckpt.config_snapshot.empty()) {
    try {
      const auto j = nlohmann::json::parse(ckpt.config_snapshot);
      if (j.contains("dropout")) cfg.dropout_rate = j.at("dropout").get<double>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::CorruptCheckpoint, std::string("config snapshot is not valid JSON: ") + e.what());
    }
  }
  return cfg;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  auto model = CustomCnn<float>::allocate(model_config_from(ckpt));
  restore_model(ckpt, model);
  std::optional<Adam> adam;
  if (ckpt.optimizer) adam = restore_optimizer(ckpt, model);
  model.set_mode(LayerMode::Eval);
  return LoadedModel{std::move(ckpt), std::move(model), std::move(adam)};
}

void save_checkpoint(CustomCnn<float>& model, const Adam* optimizer, const std::vector<std::string>& class_names,
                     const std::string& config_snapshot, double best_val_loss, const std::filesystem::path& path) {
  write_checkpoint(capture_checkpoint(model, optimizer, class_names, config_snapshot, best_val_loss), path);
}

}  // namespace ccnn
