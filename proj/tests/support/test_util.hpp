#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "dlite/rng.hpp"
#include "dlite/tensor.hpp"

namespace testutil {

inline dlite::Tensor random_tensor(dlite::Shape shape, dlite::Rng& rng, bool requires_grad,
                                   double scale = 1.0) {
    dlite::Tensor t = dlite::Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-scale, scale));
    return t;
}

// Unique scratch directory under the build tree, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("dlite-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
