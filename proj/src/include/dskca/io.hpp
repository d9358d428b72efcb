#pragma once

// Dataset ingestion (csv and raw little-endian doubles) and the versioned
// model file. A model file stores only coefficients plus the header needed
// to regenerate every feature block, so its size depends on the feature
// budget and k, never on how many training rows were consumed.
//
// Layout: "DSKC1" | u64le header length | JSON header | payload.
// Single-view payload: per block, u64le block_index then the alpha matrix as
// row-major f64le [feature_batch x k]. Paired payload: u64le section length
// and section bytes for left, then the same for right.

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dskca/model.hpp"
#include "dskca/solvers.hpp"

namespace dskca {

enum class DataFormat { csv, f64le };

inline DataFormat format_from_name(const std::string& s) {
  if (s == "csv") return DataFormat::csv;
  if (s == "f64le") return DataFormat::f64le;
  throw std::invalid_argument("unknown data format: " + s);
}

struct Dataset {
  Matrix values;
  std::optional<Matrix> paired;
};

inline Dataset make_dataset(Matrix values, std::optional<Matrix> paired = {}) {
  if (values.rows() < 1) {
    throw std::invalid_argument("dataset must have at least one row");
  }
  if (!values.allFinite()) {
    throw std::invalid_argument("dataset has non-finite entries");
  }
  if (paired) {
    if (paired->rows() != values.rows()) {
      throw std::invalid_argument("paired views must have equal row counts");
    }
    if (!paired->allFinite()) {
      throw std::invalid_argument("paired view has non-finite entries");
    }
  }
  return {std::move(values), std::move(paired)};
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  if (pos + 8 > in.size()) throw std::runtime_error("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i]))
         << (8 * i);
  }
  return v;
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

inline double get_f64(const std::string& in, std::size_t pos) {
  const std::uint64_t bits = get_u64(in, pos);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open file for writing: " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os.good()) throw std::runtime_error("failed writing file: " + path);
}

inline double parse_cell(std::string_view cell, long row, long col) {
  std::size_t a = 0, b = cell.size();
  while (a < b && (cell[a] == ' ' || cell[a] == '\t')) ++a;
  while (b > a && (cell[b - 1] == ' ' || cell[b - 1] == '\t' || cell[b - 1] == '\r')) --b;
  double v = 0.0;
  const auto res = std::from_chars(cell.data() + a, cell.data() + b, v);
  if (res.ec != std::errc() || res.ptr != cell.data() + b || a == b) {
    throw std::runtime_error("csv: non-numeric cell at row " + std::to_string(row) +
                             ", col " + std::to_string(col));
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error("csv: non-finite value at row " + std::to_string(row) +
                             ", col " + std::to_string(col));
  }
  return v;
}

}  // namespace detail

inline Matrix load_matrix_csv(const std::string& path, bool skip_header = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::string line;
  if (skip_header && !std::getline(is, line)) {
    throw std::runtime_error("csv: file has no rows: " + path);
  }
  std::vector<std::vector<double>> rows;
  long cols = -1;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && is.eof()) break;
    const long row = static_cast<long>(rows.size()) + 1;
    std::vector<double> vals;
    std::size_t start = 0;
    long col = 1;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view cell =
          std::string_view(line).substr(start, comma == std::string::npos
                                                   ? std::string::npos
                                                   : comma - start);
      vals.push_back(detail::parse_cell(cell, row, col));
      if (comma == std::string::npos) break;
      start = comma + 1;
      ++col;
    }
    if (cols < 0) {
      cols = static_cast<long>(vals.size());
    } else if (static_cast<long>(vals.size()) != cols) {
      throw std::runtime_error("csv: ragged row " + std::to_string(row) +
                               " (expected " + std::to_string(cols) + " columns)");
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error("csv: file has no rows: " + path);
  Matrix M(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (long c = 0; c < cols; ++c) {
      M(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    }
  }
  return M;
}

inline void write_matrix_csv(const std::string& path, const Matrix& M) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open file for writing: " + path);
  char buf[64];
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", M(r, c));
      if (c) os << ',';
      os << buf;
    }
    os << '\n';
  }
  if (!os.good()) throw std::runtime_error("failed writing file: " + path);
}

// Raw format: u64le row count, u64le column count, then row-major f64le.
inline Matrix load_matrix_f64le(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 16) throw std::runtime_error("f64le: file too short: " + path);
  const std::uint64_t n = detail::get_u64(bytes, 0);
  const std::uint64_t d = detail::get_u64(bytes, 8);
  if (n == 0 || d == 0) throw std::runtime_error("f64le: empty matrix: " + path);
  if (bytes.size() != 16 + 8 * n * d) {
    throw std::runtime_error("f64le: size does not match header: " + path);
  }
  Matrix M(static_cast<Index>(n), static_cast<Index>(d));
  std::size_t pos = 16;
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) {
      M(r, c) = detail::get_f64(bytes, pos);
      pos += 8;
    }
  }
  if (!M.allFinite()) {
    throw std::runtime_error("f64le: non-finite values in " + path);
  }
  return M;
}

inline void write_matrix_f64le(const std::string& path, const Matrix& M) {
  std::string bytes;
  bytes.reserve(16 + 8 * static_cast<std::size_t>(M.size()));
  detail::put_u64(bytes, static_cast<std::uint64_t>(M.rows()));
  detail::put_u64(bytes, static_cast<std::uint64_t>(M.cols()));
  for (Index r = 0; r < M.rows(); ++r) {
    for (Index c = 0; c < M.cols(); ++c) detail::put_f64(bytes, M(r, c));
  }
  detail::write_file(path, bytes);
}

inline Matrix load_matrix(const std::string& path, DataFormat fmt,
                          bool skip_header = false) {
  return fmt == DataFormat::csv ? load_matrix_csv(path, skip_header)
                                : load_matrix_f64le(path);
}

namespace detail {

inline constexpr char kMagic[] = "DSKC1";

inline nlohmann::json kernel_to_json(const KernelSpec& spec) {
  return nlohmann::json{{"bandwidth", spec.bandwidth},
                        {"dim", spec.dim},
                        {"family", family_name(spec.family)}};
}

inline KernelSpec kernel_from_json(const nlohmann::json& j) {
  return make_kernel(family_from_name(j.at("family").get<std::string>()),
                     j.at("bandwidth").get<double>(), j.at("dim").get<int>());
}

inline Index uniform_block_count(const CoefficientModel& m) {
  if (m.blocks.empty()) throw std::runtime_error("cannot serialize an empty model");
  const Index count = m.blocks.front().alpha.rows();
  for (const auto& blk : m.blocks) {
    if (blk.alpha.rows() != count || blk.alpha.cols() != m.k) {
      throw std::runtime_error("cannot serialize: blocks have uneven shapes");
    }
  }
  return count;
}

inline std::string model_payload(const CoefficientModel& m) {
  std::string out;
  for (const auto& blk : m.blocks) {
    put_u64(out, blk.block_index);
    for (Index r = 0; r < blk.alpha.rows(); ++r) {
      for (Index c = 0; c < blk.alpha.cols(); ++c) put_f64(out, blk.alpha(r, c));
    }
  }
  return out;
}

inline CoefficientModel model_from_payload(const std::string& bytes,
                                           std::size_t pos, std::size_t end,
                                           const nlohmann::json& header,
                                           const KernelSpec& spec,
                                           std::uint64_t run_seed,
                                           std::uint64_t block_count) {
  CoefficientModel m;
  m.k = header.at("k").get<int>();
  m.spec = spec;
  m.run_seed = run_seed;
  m.store_frequencies = header.at("store_frequencies").get<bool>();
  const auto count = static_cast<Index>(header.at("feature_batch").get<std::uint64_t>());
  if (m.k < 1 || count < 1) throw std::runtime_error("model file: bad header");
  for (std::uint64_t b = 0; b < block_count; ++b) {
    const std::uint64_t idx = get_u64(bytes, pos);
    pos += 8;
    if (idx != b) throw std::runtime_error("model file: non-contiguous block index");
    ModelBlock blk;
    blk.block_index = idx;
    blk.alpha.resize(count, m.k);
    for (Index r = 0; r < count; ++r) {
      for (Index c = 0; c < m.k; ++c) {
        if (pos + 8 > end) throw std::runtime_error("model file truncated");
        blk.alpha(r, c) = get_f64(bytes, pos);
        pos += 8;
      }
    }
    if (!blk.alpha.allFinite()) {
      throw std::runtime_error("model file: non-finite coefficients");
    }
    m.blocks.push_back(std::move(blk));
  }
  if (pos != end) throw std::runtime_error("model file: trailing payload bytes");
  if (m.store_frequencies && spec.family != KernelFamily::linear) {
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
      m.blocks[b].cached = sample_feature_block(spec, run_seed,
                                                m.blocks[b].block_index, count);
    }
  }
  return m;
}

inline std::string with_header(nlohmann::json header, const std::string& payload) {
  std::string out(kMagic, 5);
  const std::string hj = header.dump();
  put_u64(out, hj.size());
  out += hj;
  out += payload;
  return out;
}

}  // namespace detail

inline std::string serialize_model(const CoefficientModel& m,
                                   const std::string& task) {
  const Index count = detail::uniform_block_count(m);
  nlohmann::json header{
      {"block_count", static_cast<std::uint64_t>(m.blocks.size())},
      {"feature_batch", static_cast<std::uint64_t>(count)},
      {"format", 1},
      {"k", m.k},
      {"kernel", detail::kernel_to_json(m.spec)},
      {"run_seed", m.run_seed},
      {"store_frequencies", m.store_frequencies},
      {"task", task},
      {"total_features",
       static_cast<std::uint64_t>((m.blocks.size() - 1) * static_cast<std::size_t>(count))}};
  return detail::with_header(std::move(header), detail::model_payload(m));
}

inline std::string serialize_model(const PairedModel& pm, const std::string& task) {
  const Index count_l = detail::uniform_block_count(pm.left);
  const Index count_r = detail::uniform_block_count(pm.right);
  if (pm.left.k != pm.right.k) {
    throw std::runtime_error("cannot serialize: paired models disagree on k");
  }
  nlohmann::json header{
      {"block_count", static_cast<std::uint64_t>(pm.left.blocks.size())},
      {"block_count_right", static_cast<std::uint64_t>(pm.right.blocks.size())},
      {"feature_batch", static_cast<std::uint64_t>(count_l)},
      {"feature_batch_right", static_cast<std::uint64_t>(count_r)},
      {"format", 1},
      {"k", pm.left.k},
      {"kernel", detail::kernel_to_json(pm.left.spec)},
      {"kernel_y", detail::kernel_to_json(pm.right.spec)},
      {"run_seed", pm.left.run_seed},
      {"run_seed_right", pm.right.run_seed},
      {"store_frequencies", pm.left.store_frequencies},
      {"task", task},
      {"total_features",
       static_cast<std::uint64_t>((pm.left.blocks.size() - 1) *
                                  static_cast<std::size_t>(count_l))}};
  const std::string left = detail::model_payload(pm.left);
  const std::string right = detail::model_payload(pm.right);
  std::string payload;
  detail::put_u64(payload, left.size());
  payload += left;
  detail::put_u64(payload, right.size());
  payload += right;
  return detail::with_header(std::move(header), payload);
}

struct LoadedModel {
  std::string task;
  CoefficientModel left;
  std::optional<CoefficientModel> right;

  bool paired() const { return right.has_value(); }
};

inline LoadedModel deserialize_model(const std::string& bytes) {
  if (bytes.size() < 13 || std::memcmp(bytes.data(), detail::kMagic, 5) != 0) {
    throw std::runtime_error("not a model file (bad magic)");
  }
  const std::uint64_t hlen = detail::get_u64(bytes, 5);
  if (13 + hlen > bytes.size()) throw std::runtime_error("model file truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(13, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("model file: bad header: ") + e.what());
  }
  if (header.at("format").get<int>() != 1) {
    throw std::runtime_error("model file: unsupported format version");
  }
  LoadedModel out;
  out.task = header.at("task").get<std::string>();
  const std::size_t body = 13 + hlen;
  const KernelSpec spec = detail::kernel_from_json(header.at("kernel"));
  const auto blocks = header.at("block_count").get<std::uint64_t>();
  const auto seed = header.at("run_seed").get<std::uint64_t>();
  if (header.contains("kernel_y")) {
    const std::uint64_t llen = detail::get_u64(bytes, body);
    const std::size_t lpos = body + 8;
    if (lpos + llen + 8 > bytes.size()) throw std::runtime_error("model file truncated");
    const std::uint64_t rlen = detail::get_u64(bytes, lpos + llen);
    const std::size_t rpos = lpos + llen + 8;
    if (rpos + rlen != bytes.size()) {
      throw std::runtime_error("model file: section lengths do not match size");
    }
    out.left = detail::model_from_payload(bytes, lpos, lpos + llen, header, spec,
                                          seed, blocks);
    nlohmann::json rh = header;
    rh["feature_batch"] = header.at("feature_batch_right");
    out.right = detail::model_from_payload(
        bytes, rpos, rpos + rlen, rh, detail::kernel_from_json(header.at("kernel_y")),
        header.at("run_seed_right").get<std::uint64_t>(),
        header.at("block_count_right").get<std::uint64_t>());
  } else {
    out.left = detail::model_from_payload(bytes, body, bytes.size(), header, spec,
                                          seed, blocks);
  }
  return out;
}

inline void save_model(const std::string& path, const CoefficientModel& m,
                       const std::string& task) {
  detail::write_file(path, serialize_model(m, task));
}

inline void save_model(const std::string& path, const PairedModel& pm,
                       const std::string& task) {
  detail::write_file(path, serialize_model(pm, task));
}

inline void save_fit_result(const std::string& path, const FitResult& res) {
  if (res.right) {
    save_model(path, PairedModel{res.model, *res.right}, task_name(res.task));
  } else {
    save_model(path, res.model, task_name(res.task));
  }
}

inline LoadedModel load_model(const std::string& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace dskca
