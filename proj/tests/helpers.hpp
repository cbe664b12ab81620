#pragma once

// Shared scaffolding for the test suite: scratch directories, small file
// helpers, and synthetic word pools. Token pools used by embedding tests are
// collision-checked where it matters (see test_matching.cpp).

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testutil {

namespace fs = std::filesystem;

// Fresh unique directory under the system temp dir; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "permeval-test") {
        static std::atomic<unsigned> counter{0};
        std::random_device rd;
        std::ostringstream name;
        name << tag << "-" << rd() << "-" << counter++;
        path_ = fs::temp_directory_path() / name.str();
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec); // best effort; never throw from a dtor
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

// Synthetic word pool: "w000", "w001", ... — plenty for the generator's
// distinct-option retries at any size used in tests.
inline std::vector<std::string> make_words(int n) {
    std::vector<std::string> words;
    words.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "w%03d", i);
        words.emplace_back(buf);
    }
    return words;
}

inline fs::path source_dir() { return fs::path(PERMEVAL_SOURCE_DIR); }
inline fs::path fixtures_dir() { return source_dir() / "tests" / "fixtures"; }

} // namespace testutil
