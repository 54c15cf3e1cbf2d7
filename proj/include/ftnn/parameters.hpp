#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ftnn/error.hpp"

namespace ftnn {

struct TensorSpec {
  std::string name;
  std::vector<std::uint32_t> dims;

  std::size_t elem_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  bool operator==(const TensorSpec&) const = default;
};

// Describes how a flat value vector maps onto named model tensors.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<TensorSpec> tensors) : tensors_(std::move(tensors)) {
    offsets_.reserve(tensors_.size());
    std::size_t off = 0;
    for (const auto& t : tensors_) {
      offsets_.push_back(off);
      off += t.elem_count();
    }
    total_ = off;
  }

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total_elems() const { return total_; }
  std::size_t offset_of(std::size_t tensor_index) const { return offsets_.at(tensor_index); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return i;
    }
    fail(ErrorKind::Layout, "no tensor named '" + name + "' in layout");
  }

  // Size of the serialized checkpoint header for this layout.
  std::size_t header_bytes() const {
    std::size_t n = 5 + 4;  // magic + tensor count
    for (const auto& t : tensors_) {
      n += 4 + t.name.size() + 4 + 4 * t.dims.size();
    }
    return n;
  }

  std::size_t checkpoint_bytes() const { return header_bytes() + 8 * total_elems(); }

  bool operator==(const Layout& other) const { return tensors_ == other.tensors_; }

 private:
  std::vector<TensorSpec> tensors_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

// Flat view of all model weights: the unit of upload, averaging and
// serialization. Arithmetic is defined only between vectors of equal layout.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(std::shared_ptr<const Layout> layout)
      : layout_(std::move(layout)), values_(layout_->total_elems(), 0.0) {}

  const std::shared_ptr<const Layout>& layout_ptr() const { return layout_; }
  const Layout& layout() const { return *layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> tensor(std::size_t index) {
    return {values_.data() + layout_->offset_of(index),
            layout_->tensors()[index].elem_count()};
  }
  std::span<const double> tensor(std::size_t index) const {
    return {values_.data() + layout_->offset_of(index),
            layout_->tensors()[index].elem_count()};
  }
  std::span<double> tensor(const std::string& name) { return tensor(layout_->index_of(name)); }
  std::span<const double> tensor(const std::string& name) const {
    return tensor(layout_->index_of(name));
  }

  bool same_layout(const ParameterVector& other) const {
    if (!layout_ || !other.layout_) return false;
    return layout_ == other.layout_ || *layout_ == *other.layout_;
  }

  void check_same_layout(const ParameterVector& other) const {
    require(same_layout(other), ErrorKind::Layout, "parameter layouts differ");
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  // this += scale * other
  void add_scaled(const ParameterVector& other, double scale) {
    check_same_layout(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  }

  void scale(double s) {
    for (auto& v : values_) v *= s;
  }

  double l2_norm() const {
    double acc = 0.0;
    for (double v : values_) acc += v * v;
    return std::sqrt(acc);
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const ParameterVector& other) const {
    return same_layout(other) && values_ == other.values_;
  }

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f64le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& context)
      : data_(data), context_(context) {}

  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(data_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  double f64le() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(data_[pos_ + i]);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) {
    require(pos_ + n <= data_.size(), ErrorKind::Io, "truncated data in " + context_);
  }

  const std::string& data_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "FTNN1";

inline std::string serialize_checkpoint(const ParameterVector& params) {
  std::string out;
  out.reserve(params.layout().checkpoint_bytes());
  out.append(kCheckpointMagic, 5);
  const auto& tensors = params.layout().tensors();
  detail::put_u32le(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32le(out, static_cast<std::uint32_t>(t.name.size()));
    out.append(t.name);
    detail::put_u32le(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32le(out, d);
  }
  for (double v : params.values()) detail::put_f64le(out, v);
  return out;
}

inline ParameterVector deserialize_checkpoint(const std::string& data,
                                              const std::string& context = "checkpoint") {
  detail::ByteReader r(data, context);
  require(r.bytes(5) == std::string(kCheckpointMagic, 5), ErrorKind::Io,
          "bad magic in " + context);
  const std::uint32_t count = r.u32le();
  std::vector<TensorSpec> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorSpec t;
    const std::uint32_t name_len = r.u32le();
    t.name = r.bytes(name_len);
    const std::uint32_t rank = r.u32le();
    t.dims.resize(rank);
    for (auto& d : t.dims) d = r.u32le();
    tensors.push_back(std::move(t));
  }
  ParameterVector params(std::make_shared<Layout>(std::move(tensors)));
  for (auto& v : params.values()) v = r.f64le();
  require(r.remaining() == 0, ErrorKind::Io, "trailing bytes in " + context);
  return params;
}

inline void write_checkpoint(const std::string& path, const ParameterVector& params) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::Io, "cannot open for writing: " + path);
  const std::string data = serialize_checkpoint(params);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  require(f.good(), ErrorKind::Io, "write failed: " + path);
}

inline ParameterVector read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::Io, "cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(data, path);
}

}  // namespace ftnn
