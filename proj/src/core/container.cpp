#include "core/container.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/error.hpp"

namespace hgd {

namespace {

constexpr char kMagic[5] = {'H', 'G', 'D', 'C', '\x01'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, std::uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}
std::string read_str(std::istream& is) {
  std::string s(read_u32(is), '\0');
  is.read(s.data(), std::streamsize(s.size()));
  return s;
}

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("container has no tensor '" + name + "'");
}

const std::vector<std::int32_t>& Container::int_array(
    const std::string& name) const {
  for (auto& [n, v] : ints)
    if (n == name) return v;
  throw IoError("container has no int array '" + name + "'");
}

bool Container::has_tensor(const std::string& name) const {
  for (auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save_container(const Container& c, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  // Write to a temp file then rename so readers never observe partial files.
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + tmp);
    os.write(kMagic, 5);
    write_str(os, c.meta.dump());
    write_u32(os, std::uint32_t(c.tensors.size()));
    for (auto& [name, t] : c.tensors) {
      write_str(os, name);
      const Shape& s = t.shape();
      write_u32(os, std::uint32_t(s.n));
      write_u32(os, std::uint32_t(s.c));
      write_u32(os, std::uint32_t(s.h));
      write_u32(os, std::uint32_t(s.w));
      write_u64(os, std::uint64_t(t.size()) * sizeof(float));
      os.write(reinterpret_cast<const char*>(t.data()),
               std::streamsize(t.size() * sizeof(float)));
    }
    write_u32(os, std::uint32_t(c.ints.size()));
    for (auto& [name, v] : c.ints) {
      write_str(os, name);
      write_u64(os, std::uint64_t(v.size()) * sizeof(std::int32_t));
      os.write(reinterpret_cast<const char*>(v.data()),
               std::streamsize(v.size() * sizeof(std::int32_t)));
    }
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw IoError("not a container file: " + path);
  Container c;
  std::string meta = read_str(is);
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt container metadata in " + path + ": " + e.what());
  }
  std::uint32_t nt = read_u32(is);
  for (std::uint32_t i = 0; i < nt; ++i) {
    std::string name = read_str(is);
    Shape s;
    s.n = int(read_u32(is));
    s.c = int(read_u32(is));
    s.h = int(read_u32(is));
    s.w = int(read_u32(is));
    std::uint64_t bytes = read_u64(is);
    Tensor t(s);
    if (bytes != std::uint64_t(t.size()) * sizeof(float))
      throw IoError("tensor size mismatch in " + path);
    is.read(reinterpret_cast<char*>(t.data()), std::streamsize(bytes));
    c.tensors.emplace_back(name, std::move(t));
  }
  std::uint32_t ni = read_u32(is);
  for (std::uint32_t i = 0; i < ni; ++i) {
    std::string name = read_str(is);
    std::uint64_t bytes = read_u64(is);
    std::vector<std::int32_t> v(bytes / sizeof(std::int32_t));
    is.read(reinterpret_cast<char*>(v.data()), std::streamsize(bytes));
    c.ints.emplace_back(name, std::move(v));
  }
  if (!is) throw IoError("truncated container: " + path);
  return c;
}

}  // namespace hgd
