#include "ceco/toy_model.hpp"

#include "ceco/errors.hpp"
#include "ceco/io.hpp"
#include "ceco/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

namespace ceco {

namespace {

constexpr std::uint64_t kLayoutStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kPrototypeStream = 3;

// One seed per class plus the rest of blob_count shared out by largest
// remainder in proportion to the target counts.
std::vector<int> seeds_per_class(const std::vector<Index>& targets, int blob_count) {
    const int K = static_cast<int>(targets.size());
    std::vector<int> seeds(static_cast<std::size_t>(K), 1);
    const int extra = std::max(0, blob_count - K);
    if (extra == 0) {
        return seeds;
    }
    const double total = static_cast<double>(std::accumulate(targets.begin(), targets.end(), Index{0}));
    std::vector<double> remainder(static_cast<std::size_t>(K));
    int given = 0;
    for (int k = 0; k < K; ++k) {
        const double share = extra * static_cast<double>(targets[static_cast<std::size_t>(k)]) / total;
        const int whole = static_cast<int>(std::floor(share));
        seeds[static_cast<std::size_t>(k)] += whole;
        remainder[static_cast<std::size_t>(k)] = share - whole;
        given += whole;
    }
    std::vector<int> order(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return remainder[static_cast<std::size_t>(a)] > remainder[static_cast<std::size_t>(b)];
    });
    for (int i = 0; given < extra; ++i, ++given) {
        ++seeds[static_cast<std::size_t>(order[static_cast<std::size_t>(i % K)])];
    }
    return seeds;
}

class BlobPainter {
public:
    BlobPainter(int height, int width, Rng& rng)
        : height_(height), width_(width), labels_(static_cast<std::size_t>(height) * width, -1), rng_(rng) {
        unclaimed_ = static_cast<Index>(labels_.size());
    }

    // Grows one region of `size` pixels for class k from a random unclaimed
    // pixel, picking frontier pixels at random. If the region gets enclosed
    // it continues from a fresh seed.
    void grow(int k, Index size) {
        std::vector<Index> frontier;
        Index painted = 0;
        while (painted < size) {
            if (unclaimed_ == 0) {
                throw GenerationError("scene ran out of pixels while painting blobs");
            }
            Index pixel;
            if (frontier.empty()) {
                pixel = random_unclaimed();
            } else {
                const std::size_t at = rng_.index(frontier.size());
                pixel = frontier[at];
                frontier[at] = frontier.back();
                frontier.pop_back();
                if (labels_[static_cast<std::size_t>(pixel)] != -1) {
                    continue;
                }
            }
            labels_[static_cast<std::size_t>(pixel)] = k;
            --unclaimed_;
            ++painted;
            push_neighbours(pixel, frontier);
        }
    }

    std::vector<int> finish(int background) {
        for (auto& label : labels_) {
            if (label == -1) {
                label = background;
            }
        }
        return std::move(labels_);
    }

private:
    Index random_unclaimed() {
        auto skip = static_cast<Index>(rng_.index(static_cast<std::size_t>(unclaimed_)));
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (labels_[i] == -1 && skip-- == 0) {
                return static_cast<Index>(i);
            }
        }
        throw GenerationError("internal: unclaimed pixel bookkeeping is inconsistent");
    }

    void push_neighbours(Index pixel, std::vector<Index>& frontier) const {
        const Index r = pixel / width_;
        const Index c = pixel % width_;
        auto consider = [&](Index rr, Index cc) {
            if (rr >= 0 && rr < height_ && cc >= 0 && cc < width_) {
                const Index q = rr * width_ + cc;
                if (labels_[static_cast<std::size_t>(q)] == -1) {
                    frontier.push_back(q);
                }
            }
        };
        consider(r - 1, c);
        consider(r + 1, c);
        consider(r, c - 1);
        consider(r, c + 1);
    }

    Index height_;
    Index width_;
    std::vector<int> labels_;
    Rng& rng_;
    Index unclaimed_ = 0;
};

// Mean over the (2r+1)^2 window clipped to the grid, done separably.
Matrix box_smooth(const Matrix& x, int height, int width, int radius) {
    if (radius == 0) {
        return x;
    }
    auto pass = [&](const Matrix& in, bool along_rows) {
        Matrix out = Matrix::Zero(in.rows(), in.cols());
        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                const int pos = along_rows ? c : r;
                const int limit = along_rows ? width : height;
                const int lo = std::max(0, pos - radius);
                const int hi = std::min(limit - 1, pos + radius);
                const Index dst = static_cast<Index>(r) * width + c;
                for (int t = lo; t <= hi; ++t) {
                    const Index src = along_rows ? static_cast<Index>(r) * width + t : static_cast<Index>(t) * width + c;
                    out.row(dst) += in.row(src);
                }
                out.row(dst) /= static_cast<double>(hi - lo + 1);
            }
        }
        return out;
    };
    return pass(pass(x, true), false);
}

} // namespace

void SceneConfig::validate() const {
    if (height < 1 || width < 1) {
        throw DomainError(fmt::format("scene size must be positive (got {} x {})", height, width));
    }
    if (num_classes < 3) {
        throw DomainError(fmt::format("scenes need K >= 3 classes (got {})", num_classes));
    }
    if (num_pixels() < num_classes) {
        throw DomainError(fmt::format("{} pixels cannot hold {} classes", num_pixels(), num_classes));
    }
    if (!(beta >= 1.0) || !std::isfinite(beta)) {
        throw DomainError(fmt::format("imbalance factor beta must be >= 1 (got {})", beta));
    }
    if (input_dim < 1) {
        throw DomainError(fmt::format("input dimension must be positive (got {})", input_dim));
    }
    if (blob_count < 1) {
        throw DomainError(fmt::format("blob count must be positive (got {})", blob_count));
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw DomainError(fmt::format("noise sigma must be nonnegative (got {})", noise_sigma));
    }
    if (smooth_radius < 0) {
        throw DomainError(fmt::format("smoothing radius must be nonnegative (got {})", smooth_radius));
    }
    if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
        throw DomainError(fmt::format("prototype scale must be positive (got {})", prototype_scale));
    }
}

FeatureBatch Scene::as_batch(int num_classes) const {
    return FeatureBatch{inputs, labels, num_classes};
}

std::vector<Index> target_class_counts(const SceneConfig& cfg) {
    cfg.validate();
    const int K = cfg.num_classes;
    std::vector<double> weight(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        weight[static_cast<std::size_t>(k)] = std::pow(cfg.beta, -static_cast<double>(k) / (K - 1));
    }
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    const double N = static_cast<double>(cfg.num_pixels());
    std::vector<Index> counts(static_cast<std::size_t>(K));
    Index assigned = 0;
    for (int k = 1; k < K; ++k) {
        counts[static_cast<std::size_t>(k)] = std::llround(N * weight[static_cast<std::size_t>(k)] / total);
        assigned += counts[static_cast<std::size_t>(k)];
    }
    counts[0] = cfg.num_pixels() - assigned;
    for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] < 1) {
            throw GenerationError(fmt::format(
                "class {} would receive no pixel: {} pixels are too few for beta = {} over {} classes", k,
                cfg.num_pixels(), cfg.beta, K));
        }
    }
    return counts;
}

Matrix class_prototypes(const SceneConfig& cfg) {
    Rng rng(mix_seed(cfg.prototype_seed, kPrototypeStream));
    Matrix protos(cfg.num_classes, cfg.input_dim);
    for (Index k = 0; k < protos.rows(); ++k) {
        for (Index c = 0; c < protos.cols(); ++c) {
            protos(k, c) = cfg.prototype_scale * rng.normal();
        }
    }
    return protos;
}

Scene gen_scene(const SceneConfig& cfg) {
    const std::vector<Index> targets = target_class_counts(cfg);
    const int K = cfg.num_classes;
    const std::vector<int> seeds = seeds_per_class(targets, cfg.blob_count);

    Rng layout(mix_seed(cfg.seed, kLayoutStream));
    BlobPainter painter(cfg.height, cfg.width, layout);
    // Smallest classes first; class 0 fills whatever is left.
    for (int k = K - 1; k >= 1; --k) {
        const Index quota = targets[static_cast<std::size_t>(k)];
        const int blobs = static_cast<int>(std::min<Index>(seeds[static_cast<std::size_t>(k)], quota));
        for (int b = 0; b < blobs; ++b) {
            painter.grow(k, quota / blobs + (b < quota % blobs ? 1 : 0));
        }
    }

    Scene scene;
    scene.labels = painter.finish(0);
    scene.pixel_counts.assign(static_cast<std::size_t>(K), 0);
    for (int label : scene.labels) {
        ++scene.pixel_counts[static_cast<std::size_t>(label)];
    }

    const Matrix protos = class_prototypes(cfg);
    Rng noise(mix_seed(cfg.seed, kNoiseStream));
    Matrix raw(cfg.num_pixels(), cfg.input_dim);
    for (Index i = 0; i < raw.rows(); ++i) {
        raw.row(i) = protos.row(scene.labels[static_cast<std::size_t>(i)]);
        for (Index c = 0; c < raw.cols(); ++c) {
            raw(i, c) += cfg.noise_sigma * noise.normal();
        }
    }
    scene.inputs = box_smooth(raw, cfg.height, cfg.width, cfg.smooth_radius);
    return scene;
}

std::vector<Index> scene_center_counts(std::span<const Scene> scenes, int num_classes) {
    if (scenes.empty()) {
        throw DomainError("center counts need at least one scene");
    }
    std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
    for (const Scene& scene : scenes) {
        std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
        for (int label : scene.labels) {
            if (label < 0 || label >= num_classes) {
                throw DomainError(fmt::format("label {} outside [0, {})", label, num_classes));
            }
            seen[static_cast<std::size_t>(label)] = true;
        }
        for (int k = 0; k < num_classes; ++k) {
            counts[static_cast<std::size_t>(k)] += seen[static_cast<std::size_t>(k)] ? 1 : 0;
        }
    }
    return counts;
}

std::vector<Index> total_pixel_counts(std::span<const Scene> scenes, int num_classes) {
    std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
    for (const Scene& scene : scenes) {
        for (int label : scene.labels) {
            if (label < 0 || label >= num_classes) {
                throw DomainError(fmt::format("label {} outside [0, {})", label, num_classes));
            }
            ++counts[static_cast<std::size_t>(label)];
        }
    }
    return counts;
}

void write_scene(std::ostream& out, const Scene& scene, int num_classes) {
    write_feature_dump(out, scene.as_batch(num_classes));
}

void write_scene_config(std::ostream& out, const SceneConfig& cfg) {
    out << "height = " << cfg.height << '\n'
        << "width = " << cfg.width << '\n'
        << "classes = " << cfg.num_classes << '\n'
        << "beta = " << format_number(cfg.beta) << '\n'
        << "input_dim = " << cfg.input_dim << '\n'
        << "blob_count = " << cfg.blob_count << '\n'
        << "noise_sigma = " << format_number(cfg.noise_sigma) << '\n'
        << "smooth_radius = " << cfg.smooth_radius << '\n'
        << "prototype_scale = " << format_number(cfg.prototype_scale) << '\n'
        << "seed = " << cfg.seed << '\n'
        << "prototype_seed = " << cfg.prototype_seed << '\n';
}

SceneConfig read_scene_config(std::istream& in) {
    SceneConfig cfg;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        const auto first = text.find_first_not_of(" \t\r");
        if (first == std::string::npos || text[first] == '#') {
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw ParseError(line, "expected 'key = value'");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        std::size_t used = 0;
        try {
            if (key == "height") {
                cfg.height = std::stoi(value, &used);
            } else if (key == "width") {
                cfg.width = std::stoi(value, &used);
            } else if (key == "classes") {
                cfg.num_classes = std::stoi(value, &used);
            } else if (key == "beta") {
                cfg.beta = std::stod(value, &used);
            } else if (key == "input_dim") {
                cfg.input_dim = std::stoi(value, &used);
            } else if (key == "blob_count") {
                cfg.blob_count = std::stoi(value, &used);
            } else if (key == "noise_sigma") {
                cfg.noise_sigma = std::stod(value, &used);
            } else if (key == "smooth_radius") {
                cfg.smooth_radius = std::stoi(value, &used);
            } else if (key == "prototype_scale") {
                cfg.prototype_scale = std::stod(value, &used);
            } else if (key == "seed") {
                cfg.seed = std::stoull(value, &used);
            } else if (key == "prototype_seed") {
                cfg.prototype_seed = std::stoull(value, &used);
            } else {
                throw ParseError(line, fmt::format("unknown key '{}'", key));
            }
        } catch (const std::logic_error&) {
            throw ParseError(line, fmt::format("bad value '{}' for '{}'", value, key));
        }
        if (used != value.size()) {
            throw ParseError(line, fmt::format("bad value '{}' for '{}'", value, key));
        }
    }
    cfg.validate();
    return cfg;
}

} // namespace ceco
