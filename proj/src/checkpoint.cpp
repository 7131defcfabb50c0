#include "nrsteg/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <string>

namespace nrsteg {
namespace {

constexpr char kMagic[4] = {'N', 'R', 'C', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > b_.size())
      throw IoError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = std::uint16_t(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

struct Slot {
  std::vector<std::uint32_t> dims;
  Vector<float>* values;
  bool filled = false;
};

void write_entry(Writer& w, const std::string& name, const std::vector<std::uint32_t>& dims,
                 const Vector<float>& values) {
  w.u16(std::uint16_t(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(std::uint8_t(dims.size()));
  for (auto d : dims) w.u32(d);
  for (float v : values) w.f32(v);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const OptState<float>* optimizer) {
  std::uint32_t count = 0;
  for_each_tensor([&](const std::string&, ParamRole, const auto&, const auto&) { ++count; }, model);
  if (optimizer)
    for_each_tensor([&](const std::string&, ParamRole role, const auto&, const auto&) {
      if (is_trainable(role)) count += 2;
    }, model);

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(count);
  for_each_tensor([&](const std::string& name, ParamRole, const std::vector<std::uint32_t>& dims,
                      const Vector<float>& v) { write_entry(w, name, dims, v); },
                  model);
  if (optimizer) {
    for_each_tensor([&](const std::string& name, ParamRole role, const std::vector<std::uint32_t>& dims,
                        const Vector<float>& sq, const Vector<float>& dl) {
      if (!is_trainable(role)) return;
      write_entry(w, "opt.square_avg." + name, dims, sq);
      write_entry(w, "opt.delta_avg." + name, dims, dl);
    }, optimizer->square_avg, optimizer->delta_avg);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic at byte 0");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version) + " at byte 4");
  const std::uint32_t count = r.u32("entry count");

  Checkpoint ck{zeros_like(init_model<float>(0)), std::nullopt};
  OptState<float> opt = OptState<float>::fresh(ck.model);
  std::map<std::string, Slot> slots;
  for_each_tensor([&](const std::string& name, ParamRole role, const std::vector<std::uint32_t>& dims,
                      Vector<float>& v, Vector<float>& sq, Vector<float>& dl) {
    slots[name] = {dims, &v};
    if (is_trainable(role)) {
      slots["opt.square_avg." + name] = {dims, &sq};
      slots["opt.delta_avg." + name] = {dims, &dl};
    }
  }, ck.model, opt.square_avg, opt.delta_avg);

  bool any_opt = false;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t at = r.pos();
    const std::string name = r.str(r.u16("name length"), "name");
    auto it = slots.find(name);
    if (it == slots.end())
      throw IoError("checkpoint: unknown parameter '" + name + "' at byte " + std::to_string(at));
    if (it->second.filled)
      throw IoError("checkpoint: duplicate parameter '" + name + "' at byte " + std::to_string(at));
    const std::uint8_t rank = r.u8("rank");
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32("dims");
    if (dims != it->second.dims)
      throw IoError("checkpoint: dims of '" + name + "' do not match the architecture (byte " +
                    std::to_string(at) + ")");
    Vector<float>& values = *it->second.values;
    for (auto& v : values) v = r.f32("values");
    it->second.filled = true;
    any_opt = any_opt || name.starts_with("opt.");
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes at byte " + std::to_string(r.pos()));
  for (const auto& [name, slot] : slots) {
    if (slot.filled) continue;
    if (name.starts_with("opt.") && !any_opt) continue;
    throw IoError("checkpoint: missing parameter '" + name + "'");
  }
  if (any_opt) ck.optimizer = std::move(opt);
  return ck;
}

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path, const OptState<float>* optimizer) {
  const auto bytes = encode_checkpoint(model, optimizer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint_full(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Model<float> load_checkpoint(const std::filesystem::path& path) { return load_checkpoint_full(path).model; }

}  // namespace nrsteg
