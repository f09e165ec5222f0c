#pragma once

#include <string>
#include <string_view>

namespace pidgen {

std::string sha256_hex(std::string_view data);
/// Hash git assigns to a blob with this content.
std::string git_blob_hash(std::string_view data);
/// git_blob_hash of a file's bytes; empty string when unreadable.
std::string git_blob_hash_file(const std::string& path);

}  // namespace pidgen
