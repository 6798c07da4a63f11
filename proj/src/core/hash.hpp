#pragma once

#include <string>

namespace hgd {

// SHA-256 hex digests, used for content-addressed artifact paths and for
// recording input identities in run manifests.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace hgd
