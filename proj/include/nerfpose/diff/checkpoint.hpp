#pragma once

#include "nerfpose/diff/params.hpp"
#include "nerfpose/io_util.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace nerfpose::diff {

// Binary container: format tag, scalar width, global training step, then one
// record per parameter with name, shape, raw values and Adam state.
// Little-endian; width must match the loading scalar type.
inline constexpr char kCheckpointMagic[8] = {'N', 'P', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

template <typename U>
void put(std::ostream& os, const U& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const uint32_t n = get<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

template <typename T>
void put_tensor(std::ostream& os, const Tensor<T>& t) {
  put<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
  for (int64_t d : t.shape) put<int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(T)));
}

template <typename T>
Tensor<T> get_tensor(std::istream& is) {
  const uint32_t rank = get<uint32_t>(is);
  std::vector<int64_t> shape(rank);
  for (auto& d : shape) d = get<int64_t>(is);
  Tensor<T> t(std::move(shape));
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor");
  return t;
}

}  // namespace detail

/// Serialize several named stores into one checkpoint file (atomically).
template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const std::map<std::string, const ParameterStore<T>*>& stores,
                     int64_t global_step) {
  atomic_write(path, [&](std::ostream& os) {
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<uint32_t>(os, static_cast<uint32_t>(sizeof(T)));
    detail::put<int64_t>(os, global_step);
    detail::put<uint32_t>(os, static_cast<uint32_t>(stores.size()));
    for (const auto& [store_name, store] : stores) {
      detail::put_string(os, store_name);
      detail::put<int64_t>(os, store->global_step);
      detail::put<int64_t>(os, store->skipped_updates);
      detail::put<uint32_t>(os, static_cast<uint32_t>(store->entries.size()));
      for (const auto& [name, e] : store->entries) {
        detail::put_string(os, name);
        detail::put<int64_t>(os, e.steps);
        detail::put_tensor(os, e.value);
        detail::put_tensor(os, e.m);
        detail::put_tensor(os, e.v);
      }
    }
  });
}

/// Load stores saved by save_checkpoint. Returns the global step.
template <typename T>
int64_t load_checkpoint(const std::filesystem::path& path,
                        const std::map<std::string, ParameterStore<T>*>& stores) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  const uint32_t width = detail::get<uint32_t>(is);
  if (width != sizeof(T))
    throw std::runtime_error("checkpoint scalar width " + std::to_string(width) +
                             " does not match expected " + std::to_string(sizeof(T)));
  const int64_t global_step = detail::get<int64_t>(is);
  const uint32_t nstores = detail::get<uint32_t>(is);
  for (uint32_t si = 0; si < nstores; ++si) {
    const std::string store_name = detail::get_string(is);
    auto it = stores.find(store_name);
    if (it == stores.end())
      throw std::runtime_error("checkpoint contains unexpected store: " + store_name);
    ParameterStore<T>& store = *it->second;
    store.entries.clear();
    store.global_step = detail::get<int64_t>(is);
    store.skipped_updates = detail::get<int64_t>(is);
    const uint32_t nparams = detail::get<uint32_t>(is);
    for (uint32_t pi = 0; pi < nparams; ++pi) {
      const std::string name = detail::get_string(is);
      typename ParameterStore<T>::Entry e;
      e.steps = detail::get<int64_t>(is);
      e.value = detail::get_tensor<T>(is);
      e.m = detail::get_tensor<T>(is);
      e.v = detail::get_tensor<T>(is);
      store.entries.emplace(name, std::move(e));
    }
  }
  return global_step;
}

}  // namespace nerfpose::diff
