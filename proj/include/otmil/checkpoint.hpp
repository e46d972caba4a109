#pragma once
// Checkpoint container. Layout (little-endian, see docs/FORMATS.md):
//
//   magic "OTMILCKP" (8), version u16, config_len u32, config bytes (UTF-8),
//   seed u64, epochs u32, tensor_count u32, then per tensor:
//   name_len u16, name bytes, ndim u8, dims u64[ndim], data f64 row-major.

#include <otmil/bag_io.hpp>
#include <otmil/common.hpp>
#include <otmil/model.hpp>

#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

namespace otmil {

inline constexpr char kCheckpointMagic[9] = "OTMILCKP";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::string config_echo;
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
};

namespace detail {

inline void put_tensor(std::vector<unsigned char>& out, const std::string& name,
                       const std::vector<std::uint64_t>& dims,
                       const double* data) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(static_cast<unsigned char>(dims.size()));
  std::uint64_t count = 1;
  for (std::uint64_t d : dims) {
    put_u64(out, d);
    count *= d;
  }
  for (std::uint64_t i = 0; i < count; ++i) put_f64(out, data[i]);
}

struct TensorReader {
  const std::vector<unsigned char>& bytes;
  std::size_t pos;
  std::string origin;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) {
      throw IoError(IoError::Code::Truncated, origin + ": truncated checkpoint");
    }
  }

  std::pair<std::string, std::vector<double>> read_tensor(
      std::vector<std::uint64_t>& dims) {
    need(2);
    const std::uint16_t name_len = get_u16(bytes.data() + pos);
    pos += 2;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos),
                     name_len);
    pos += name_len;
    need(1);
    const int ndim = bytes[pos++];
    dims.clear();
    std::uint64_t count = 1;
    for (int i = 0; i < ndim; ++i) {
      need(8);
      dims.push_back(get_u64(bytes.data() + pos));
      pos += 8;
      count *= dims.back();
    }
    if (count > (1ull << 32)) {
      throw IoError(IoError::Code::Malformed, origin + ": absurd tensor size");
    }
    need(8 * count);
    std::vector<double> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      data[i] = get_f64(bytes.data() + pos);
      pos += 8;
    }
    return {std::move(name), std::move(data)};
  }
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::vector<unsigned char> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u16(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.config_echo.size()));
  out.insert(out.end(), ckpt.config_echo.begin(), ckpt.config_echo.end());
  detail::put_u64(out, ckpt.seed);
  detail::put_u32(out, ckpt.epochs);
  detail::put_u32(out, 7);

  const ModelParams& p = ckpt.params;
  const std::uint64_t D = static_cast<std::uint64_t>(p.proj_weight.rows());
  const std::uint64_t d = static_cast<std::uint64_t>(p.proj_weight.cols());
  const std::uint64_t K = static_cast<std::uint64_t>(p.tokens.rows());

  // Matrices are serialized row-major.
  std::vector<double> buf;
  auto row_major = [&buf](const Matrix& m) {
    buf.resize(static_cast<std::size_t>(m.size()));
    std::size_t at = 0;
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) buf[at++] = m(i, j);
    return buf.data();
  };
  detail::put_tensor(out, "proj_weight", {D, d}, row_major(p.proj_weight));
  detail::put_tensor(out, "proj_bias", {d}, p.proj_bias.data());
  detail::put_tensor(out, "tokens", {K, d}, row_major(p.tokens));
  detail::put_tensor(out, "agg_weight", {K}, p.agg_weight.data());
  detail::put_tensor(out, "agg_bias", {1}, &p.agg_bias);
  detail::put_tensor(out, "pred_weight", {d}, p.pred_weight.data());
  detail::put_tensor(out, "pred_bias", {1}, &p.pred_bias);

  detail::write_binary_file(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::read_binary_file(path);
  detail::TensorReader rd{bytes, 0, path};
  rd.need(8);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError(IoError::Code::BadMagic, path + ": bad magic");
  }
  rd.pos = 8;
  rd.need(2);
  const std::uint16_t version = detail::get_u16(bytes.data() + rd.pos);
  rd.pos += 2;
  if (version != kCheckpointVersion) {
    throw IoError(IoError::Code::BadVersion,
                  path + ": unsupported version " + std::to_string(version));
  }
  rd.need(4);
  const std::uint32_t cfg_len = detail::get_u32(bytes.data() + rd.pos);
  rd.pos += 4;
  rd.need(cfg_len);
  Checkpoint ckpt;
  ckpt.config_echo.assign(
      reinterpret_cast<const char*>(bytes.data() + rd.pos), cfg_len);
  rd.pos += cfg_len;
  rd.need(12);
  ckpt.seed = detail::get_u64(bytes.data() + rd.pos);
  rd.pos += 8;
  ckpt.epochs = detail::get_u32(bytes.data() + rd.pos);
  rd.pos += 4;
  rd.need(4);
  const std::uint32_t n_tensors = detail::get_u32(bytes.data() + rd.pos);
  rd.pos += 4;

  std::vector<std::uint64_t> dims;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, data] = rd.read_tensor(dims);
    auto as_matrix = [&](Matrix& m) {
      if (dims.size() != 2) {
        throw IoError(IoError::Code::Malformed,
                      path + ": tensor '" + name + "' must be 2-d");
      }
      m.resize(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
      std::size_t at = 0;
      for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) m(r, c) = data[at++];
    };
    auto as_vector = [&](Vector& v) {
      if (dims.size() != 1) {
        throw IoError(IoError::Code::Malformed,
                      path + ": tensor '" + name + "' must be 1-d");
      }
      v.resize(static_cast<int>(dims[0]));
      for (int r = 0; r < v.size(); ++r) v(r) = data[r];
    };
    auto as_scalar = [&](double& s) {
      if (data.size() != 1) {
        throw IoError(IoError::Code::Malformed,
                      path + ": tensor '" + name + "' must be scalar");
      }
      s = data[0];
    };
    if (name == "proj_weight") {
      as_matrix(ckpt.params.proj_weight);
    } else if (name == "proj_bias") {
      as_vector(ckpt.params.proj_bias);
    } else if (name == "tokens") {
      as_matrix(ckpt.params.tokens);
    } else if (name == "agg_weight") {
      as_vector(ckpt.params.agg_weight);
    } else if (name == "agg_bias") {
      as_scalar(ckpt.params.agg_bias);
    } else if (name == "pred_weight") {
      as_vector(ckpt.params.pred_weight);
    } else if (name == "pred_bias") {
      as_scalar(ckpt.params.pred_bias);
    } else {
      throw IoError(IoError::Code::Malformed,
                    path + ": unknown tensor '" + name + "'");
    }
  }
  if (rd.pos != bytes.size()) {
    throw IoError(IoError::Code::Malformed, path + ": trailing bytes");
  }
  if (ckpt.params.proj_weight.size() == 0 || ckpt.params.tokens.size() == 0 ||
      ckpt.params.pred_weight.size() == 0 || ckpt.params.agg_weight.size() == 0) {
    throw IoError(IoError::Code::Malformed, path + ": missing tensors");
  }
  return ckpt;
}

}  // namespace otmil
