#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "dmvfc/fiberdata.hpp"

namespace testing {

inline dmvfc::PointMatrix points(std::initializer_list<std::initializer_list<float>> rows) {
    dmvfc::PointMatrix m(static_cast<Eigen::Index>(rows.size()), 3);
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (float v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

inline dmvfc::Fiber fiber(std::initializer_list<std::initializer_list<float>> rows) {
    return dmvfc::Fiber{points(rows)};
}

inline dmvfc::Fiber random_fiber(std::mt19937_64& rng, int n, double spread = 10.0) {
    std::normal_distribution<double> normal(0.0, spread);
    dmvfc::Fiber f;
    f.points.resize(n, 3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) f.points(i, c) = static_cast<float>(normal(rng));
    return f;
}

inline std::vector<float> random_series(std::mt19937_64& rng, int t) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> s(static_cast<std::size_t>(t));
    for (auto& v : s) v = normal(rng);
    return s;
}

// Fresh scratch directory under the system temp path, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("dmvfc_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Direct-formula references for the fiber distances.
inline double naive_mdf(const dmvfc::Fiber& a, const dmvfc::Fiber& b) {
    const int n = a.size();
    double direct = 0.0, flipped = 0.0;
    for (int i = 0; i < n; ++i) {
        double d2 = 0.0, f2 = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double dd = double(a.points(i, c)) - double(b.points(i, c));
            const double ff = double(a.points(i, c)) - double(b.points(n - 1 - i, c));
            d2 += dd * dd;
            f2 += ff * ff;
        }
        direct += std::sqrt(d2);
        flipped += std::sqrt(f2);
    }
    return std::min(direct, flipped) / n;
}

inline double naive_hausdorff(const dmvfc::Fiber& a, const dmvfc::Fiber& b) {
    auto directed = [](const dmvfc::Fiber& x, const dmvfc::Fiber& y) {
        double worst = 0.0;
        for (int i = 0; i < x.size(); ++i) {
            double best = INFINITY;
            for (int j = 0; j < y.size(); ++j) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = double(x.points(i, c)) - double(y.points(j, c));
                    d2 += d * d;
                }
                best = std::min(best, std::sqrt(d2));
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

}  // namespace testing
