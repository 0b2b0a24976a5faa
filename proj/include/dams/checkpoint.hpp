#pragma once

// Binary checkpoint format (all integers and reals little-endian):
//
//   "DAMS"  u32 version
//   config block      u32 length, UTF-8 key=value lines
//   u32 tensor count  { str name, u32 group, u32 ndims, u64 dims..., u8 width, raw values }
//   u64 optimizer step
//   u32 moment count  { str name, u64 n, raw m, raw v }
//   u32 rng count     { str state }
//
// where str is u32 length + bytes and width is the byte size of one value.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dams/nn.hpp"
#include "dams/optim.hpp"

namespace dams {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Code { version_mismatch, truncated, shape_mismatch };
  CheckpointError(Code code, const std::string& what) : Error(ErrorKind::data, what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

struct CheckpointTensor {
  std::string name;
  Group group = Group::embeddings;
  Shape shape;
  std::vector<real> values;
};

struct CheckpointMoments {
  std::string name;
  std::vector<real> m, v;
};

struct Checkpoint {
  std::map<std::string, std::string> config;  // model + run configuration echo
  std::vector<CheckpointTensor> tensors;
  std::uint64_t optimizer_step = 0;
  std::vector<CheckpointMoments> moments;
  std::vector<std::string> rng_states;

  std::string get(const std::string& key) const {
    auto it = config.find(key);
    if (it == config.end())
      throw CheckpointError(CheckpointError::Code::version_mismatch, "checkpoint config lacks key '" + key + "'");
    return it->second;
  }
};

namespace detail {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <class U>
  void pod(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    os_.write(buf, sizeof(U));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void reals(const std::vector<real>& v) {
    for (real x : v) pod(x);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  template <class U>
  U pod() {
    char buf[sizeof(U)];
    if (!is_.read(buf, sizeof(U)))
      throw CheckpointError(CheckpointError::Code::truncated, "checkpoint truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 30)) throw CheckpointError(CheckpointError::Code::truncated, "checkpoint string length corrupt");
    std::string s(n, '\0');
    if (n && !is_.read(s.data(), n)) throw CheckpointError(CheckpointError::Code::truncated, "checkpoint truncated");
    return s;
  }
  std::vector<real> reals(std::uint64_t n, std::uint8_t width) {
    if (n > (std::uint64_t(1) << 34)) throw CheckpointError(CheckpointError::Code::truncated, "checkpoint size corrupt");
    std::vector<real> v(n);
    for (auto& x : v) x = width == 8 ? real(pod<double>()) : real(pod<float>());
    return v;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream buf(std::ios::binary);
  detail::Writer w(buf);
  buf.write("DAMS", 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  std::string cfg;
  for (const auto& [k, v] : ck.config) cfg += k + "=" + v + "\n";
  w.str(cfg);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.str(t.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.group));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    w.pod<std::uint8_t>(sizeof(real));
    w.reals(t.values);
  }
  w.pod<std::uint64_t>(ck.optimizer_step);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.moments.size()));
  for (const auto& m : ck.moments) {
    w.str(m.name);
    w.pod<std::uint64_t>(m.m.size());
    w.pod<std::uint8_t>(sizeof(real));
    w.reals(m.m);
    w.reals(m.v);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.rng_states.size()));
  for (const auto& s : ck.rng_states) w.str(s);

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path);
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing checkpoint " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path);
  detail::Reader r(in);
  char magic[4];
  if (!in.read(magic, 4)) throw CheckpointError(CheckpointError::Code::truncated, path + ": checkpoint truncated");
  if (std::memcmp(magic, "DAMS", 4) != 0)
    throw CheckpointError(CheckpointError::Code::version_mismatch, path + ": not a DAMS checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Code::version_mismatch,
                          path + ": checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  Checkpoint ck;
  std::istringstream cfg(r.str());
  for (std::string line; std::getline(cfg, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) ck.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto nt = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nt; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    t.group = static_cast<Group>(r.pod<std::uint32_t>());
    const auto nd = r.pod<std::uint32_t>();
    if (nd > 8) throw CheckpointError(CheckpointError::Code::truncated, path + ": corrupt tensor header");
    for (std::uint32_t k = 0; k < nd; ++k) t.shape.push_back(r.pod<std::uint64_t>());
    const auto width = r.pod<std::uint8_t>();
    if (width != 4 && width != 8) throw CheckpointError(CheckpointError::Code::truncated, path + ": corrupt value width");
    t.values = r.reals(shape_size(t.shape), width);
    ck.tensors.push_back(std::move(t));
  }
  ck.optimizer_step = r.pod<std::uint64_t>();
  const auto nm = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nm; ++i) {
    CheckpointMoments m;
    m.name = r.str();
    const auto n = r.pod<std::uint64_t>();
    const auto width = r.pod<std::uint8_t>();
    if (width != 4 && width != 8) throw CheckpointError(CheckpointError::Code::truncated, path + ": corrupt value width");
    m.m = r.reals(n, width);
    m.v = r.reals(n, width);
    ck.moments.push_back(std::move(m));
  }
  const auto nr = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nr; ++i) ck.rng_states.push_back(r.str());
  return ck;
}

inline void put_block_config(Checkpoint& ck, const BlockConfig& c, std::size_t vocab_size) {
  ck.config["model.layers"] = std::to_string(c.layers);
  ck.config["model.heads"] = std::to_string(c.heads);
  ck.config["model.model_dim"] = std::to_string(c.model_dim);
  ck.config["model.ffn_dim"] = std::to_string(c.ffn_dim);
  ck.config["model.max_positions"] = std::to_string(c.max_positions);
  ck.config["model.max_sentences"] = std::to_string(c.max_sentences);
  std::ostringstream os;
  os.precision(17);
  os << c.dropout;
  ck.config["model.dropout"] = os.str();
  std::ostringstream is;
  is.precision(17);
  is << c.init_std;
  ck.config["model.init_std"] = is.str();
  ck.config["model.vocab_size"] = std::to_string(vocab_size);
}

inline BlockConfig block_config_of(const Checkpoint& ck) {
  BlockConfig c;
  c.layers = std::stoi(ck.get("model.layers"));
  c.heads = std::stoi(ck.get("model.heads"));
  c.model_dim = std::stoi(ck.get("model.model_dim"));
  c.ffn_dim = std::stoi(ck.get("model.ffn_dim"));
  c.max_positions = std::stoi(ck.get("model.max_positions"));
  c.max_sentences = std::stoi(ck.get("model.max_sentences"));
  c.dropout = std::stod(ck.get("model.dropout"));
  c.init_std = std::stod(ck.get("model.init_std"));
  return c;
}

/// Parameters (and, when an optimizer is given, its moments) as checkpoint blocks.
inline Checkpoint snapshot(const DamsModel& model, const Adam<real>* opt = nullptr,
                           const std::map<const detail::Storage<real>*, std::string>* names = nullptr) {
  Checkpoint ck;
  put_block_config(ck, model.config(), model.vocab_size());
  for (const auto& p : model.params())
    ck.tensors.push_back({p.name, p.group, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  if (opt) {
    ck.optimizer_step = opt->step_count();
    std::map<const detail::Storage<real>*, std::string> by_ptr;
    for (const auto& p : model.params()) by_ptr[p.tensor.impl().get()] = p.name;
    if (names) by_ptr.insert(names->begin(), names->end());
    std::size_t k = 0;
    for (const auto& g : opt->groups())
      for (const auto& p : g.params) {
        const auto& mo = opt->moments()[k++];
        ck.moments.push_back({by_ptr.at(p.impl().get()), mo.m, mo.v});
      }
  }
  return ck;
}

/// Copies checkpoint parameters into a model built with the same architecture.
inline void restore_params(DamsModel& model, const Checkpoint& ck) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t;
  for (auto& p : model.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw CheckpointError(CheckpointError::Code::shape_mismatch, "checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape())
      throw CheckpointError(CheckpointError::Code::shape_mismatch,
                            "parameter " + p.name + ": checkpoint shape " + shape_str(it->second->shape) +
                                " vs model " + shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
  }
  if (by_name.size() != model.params().size())
    throw CheckpointError(CheckpointError::Code::shape_mismatch, "checkpoint has parameters the model lacks");
}

/// Restores optimizer moments and step; moments are matched by parameter name.
inline void restore_optimizer(Adam<real>& opt, const DamsModel& model, const Checkpoint& ck) {
  std::map<std::string, const CheckpointMoments*> by_name;
  for (const auto& m : ck.moments) by_name[m.name] = &m;
  std::map<const detail::Storage<real>*, std::string> names;
  for (const auto& p : model.params()) names[p.tensor.impl().get()] = p.name;
  std::size_t k = 0;
  for (const auto& g : opt.groups())
    for (const auto& p : g.params) {
      auto& mo = opt.moments()[k++];
      auto it = by_name.find(names.at(p.impl().get()));
      if (it == by_name.end()) continue;  // parameter the saved optimizer did not manage
      if (it->second->m.size() != mo.m.size())
        throw CheckpointError(CheckpointError::Code::shape_mismatch, "optimizer moments for " + it->first + " mismatch");
      mo.m = it->second->m;
      mo.v = it->second->v;
    }
  opt.set_step_count(ck.optimizer_step);
}

/// Builds a model with the checkpoint's architecture and parameters.
inline std::unique_ptr<DamsModel> model_from_checkpoint(const Checkpoint& ck) {
  auto model = std::make_unique<DamsModel>(block_config_of(ck), std::stoul(ck.get("model.vocab_size")), 0);
  restore_params(*model, ck);
  return model;
}

}  // namespace dams
