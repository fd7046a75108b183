#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mixquant/rng.hpp"
#include "mixquant/types.hpp"

namespace mixquant::testutil {

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
  public:
    TempDir() {
        auto pattern = (std::filesystem::temp_directory_path() / "mixquant-XXXXXX").string();
        if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    return bytes;
}

inline bool same_file_bytes(const std::filesystem::path& a,
                            const std::filesystem::path& b) {
    return read_bytes(a) == read_bytes(b);
}

// Byte-compares two directory trees (regular files only, relative paths).
inline bool same_dir_bytes(const std::filesystem::path& a,
                           const std::filesystem::path& b) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files_a, files_b;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.is_regular_file()) files_a.push_back(fs::relative(entry.path(), a));
    }
    for (const auto& entry : fs::recursive_directory_iterator(b)) {
        if (entry.is_regular_file()) files_b.push_back(fs::relative(entry.path(), b));
    }
    std::sort(files_a.begin(), files_a.end());
    std::sort(files_b.begin(), files_b.end());
    if (files_a != files_b) return false;
    for (const auto& rel : files_a) {
        if (!same_file_bytes(a / rel, b / rel)) return false;
    }
    return true;
}

inline MatrixRMd random_matrix(Index rows, Index cols, Xoshiro256pp& rng,
                               double scale = 1.0) {
    MatrixRMd m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
    }
    return m;
}

} // namespace mixquant::testutil
