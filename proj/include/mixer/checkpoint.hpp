#pragma once

// Text checkpoint format `#mixer-ckpt v1`: header line, then one block per
// tensor (name line, "rows cols" line, row-major values). Values are printed
// with 17 significant digits, which round-trips IEEE doubles bit-exactly.
// The first block, "meta", carries the model configuration.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mixer/model.hpp"

namespace mixer {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_block(std::ostream& out, const std::string& name, const Mat& m) {
  out << name << '\n' << m.rows << ' ' << m.cols << '\n';
  char buf[40];
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out << buf << (j + 1 == m.cols ? '\n' : ' ');
    }
  }
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path);
  out << "#mixer-ckpt v1\n";
  Mat meta(1, 6);
  meta(0, 0) = p.cell == CellKind::lstm ? 1.0 : 0.0;
  meta(0, 1) = p.vocab;
  meta(0, 2) = p.hidden;
  meta(0, 3) = p.edim;
  meta(0, 4) = p.max_src;
  meta(0, 5) = p.window;
  detail::write_block(out, "meta", meta);
  for (const auto& [name, m] : const_cast<ModelParams&>(p).all_tensors())
    detail::write_block(out, name, *m);
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path);
  std::string header;
  if (!std::getline(in, header) || header != "#mixer-ckpt v1")
    throw CheckpointError("checkpoint: bad header in " + path);

  std::map<std::string, Mat> blocks;
  std::string name;
  while (in >> name) {
    Mat m;
    if (!(in >> m.rows >> m.cols) || m.rows < 0 || m.cols < 0)
      throw CheckpointError("checkpoint: bad dims for tensor " + name);
    m.a.resize(static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols));
    for (double& v : m.a)
      if (!(in >> v)) throw CheckpointError("checkpoint: truncated tensor " + name);
    if (!blocks.emplace(name, std::move(m)).second)
      throw CheckpointError("checkpoint: duplicate tensor " + name);
  }

  auto meta_it = blocks.find("meta");
  if (meta_it == blocks.end() || meta_it->second.size() != 6)
    throw CheckpointError("checkpoint: missing meta block");
  const Mat& meta = meta_it->second;
  const CellKind cell = meta(0, 0) != 0.0 ? CellKind::lstm : CellKind::elman;
  ModelParams p = make_params(cell, static_cast<int>(meta(0, 1)), static_cast<int>(meta(0, 2)),
                              static_cast<int>(meta(0, 4)), static_cast<int>(meta(0, 5)));
  if (p.edim != static_cast<int>(meta(0, 3)))
    throw CheckpointError("checkpoint: inconsistent embedding width in meta");

  for (auto& [tname, m] : p.all_tensors()) {
    auto it = blocks.find(tname);
    if (it == blocks.end()) throw CheckpointError("checkpoint: missing tensor " + tname);
    if (it->second.rows != m->rows || it->second.cols != m->cols)
      throw CheckpointError("checkpoint: shape mismatch for tensor " + tname);
    *m = std::move(it->second);
  }
  return p;
}

}  // namespace mixer
