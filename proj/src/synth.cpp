#include "fewshot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fewshot/error.hpp"
#include "fewshot/rng.hpp"

namespace fewshot::synth {

namespace fs = std::filesystem;

namespace {

constexpr ShapeKind kShapes[] = {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Diamond,
                                 ShapeKind::Cross};
constexpr int kShapeCount = 5;

std::uint8_t clamp_byte(double v)
{
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

std::string_view to_string(ShapeKind k)
{
    switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Diamond: return "diamond";
    case ShapeKind::Cross: return "cross";
    }
    return "?";
}

ShapeKind parse_shape(std::string_view text)
{
    for (ShapeKind k : kShapes)
        if (to_string(k) == text)
            return k;
    fail(ErrorKind::InvalidArgument, "unknown shape '" + std::string(text) + "'");
}

const std::vector<ColorName>& palette()
{
    static const std::vector<ColorName> colors = {
        {"red", {220, 40, 40}},    {"green", {40, 180, 60}},   {"blue", {50, 70, 220}},
        {"yellow", {230, 210, 40}}, {"magenta", {200, 50, 200}}, {"cyan", {40, 200, 210}},
    };
    return colors;
}

std::vector<ClassSpec> class_specs(int n)
{
    const int n_colors = static_cast<int>(palette().size());
    require(n >= 1 && n <= n_colors * kShapeCount, ErrorKind::InvalidArgument,
            "synthetic class count must be in [1, " + std::to_string(n_colors * kShapeCount) + "]");
    std::vector<ClassSpec> out;
    for (int i = 0; i < n; ++i) {
        ClassSpec spec;
        spec.color = i % n_colors;
        spec.shape = kShapes[i % kShapeCount];
        spec.name = palette()[static_cast<std::size_t>(spec.color)].name + " " + std::string(to_string(spec.shape));
        out.push_back(std::move(spec));
    }
    return out;
}

nlohmann::json ShapeInstance::to_json() const
{
    return {{"class", class_index}, {"shape", to_string(shape)}, {"cx", cx}, {"cy", cy}, {"radius", radius},
            {"rgb", {rgb[0], rgb[1], rgb[2]}}};
}

ShapeInstance ShapeInstance::from_json(const nlohmann::json& j)
{
    ShapeInstance s;
    s.class_index = j.at("class").get<int>();
    s.shape = parse_shape(j.at("shape").get<std::string>());
    s.cx = j.at("cx").get<double>();
    s.cy = j.at("cy").get<double>();
    s.radius = j.at("radius").get<double>();
    for (int c = 0; c < 3; ++c)
        s.rgb[c] = j.at("rgb").at(static_cast<std::size_t>(c)).get<std::uint8_t>();
    return s;
}

bool covers(const ShapeInstance& s, int x, int y)
{
    const double dx = x + 0.5 - s.cx;
    const double dy = y + 0.5 - s.cy;
    const double r = s.radius;
    switch (s.shape) {
    case ShapeKind::Circle:
        return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square:
        return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case ShapeKind::Triangle:
        // apex up at -r, base at +0.8r spanning [-r, r]
        return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= (dy + r) / 1.8;
    case ShapeKind::Diamond:
        return std::abs(dx) + std::abs(dy) <= r;
    case ShapeKind::Cross: {
        const double ax = std::abs(dx);
        const double ay = std::abs(dy);
        return (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r);
    }
    }
    return false;
}

image::LabelMap rasterize_labels(const std::vector<ShapeInstance>& shapes, int width, int height)
{
    image::LabelMap labels(width, height, 0);
    for (const ShapeInstance& s : shapes) {
        const std::uint8_t id = episodes::DatasetManifest::annotation_id(s.class_index);
        const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - s.radius)) - 1);
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(s.cx + s.radius)) + 1);
        const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - s.radius)) - 1);
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(s.cy + s.radius)) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (covers(s, x, y))
                    labels.at(x, y) = id;
    }
    return labels;
}

void SynthConfig::validate() const
{
    class_specs(n_classes);
    auto check = [](bool ok, const char* what) { require(ok, ErrorKind::InvalidArgument, what); };
    check(images_per_class >= 1, "images per class must be positive");
    check(canvas >= 16, "canvas must be at least 16 pixels");
    check(max_distractors >= 0, "distractor count must be nonnegative");
    check(max_instances >= 1, "instance count must be positive");
    check(max_shapes >= max_instances, "shape cap must allow every instance");
    check(min_radius >= 2.0 && min_radius <= max_radius, "radii must satisfy 2 <= min <= max");
    check(2.0 * max_radius < canvas, "shapes must fit on the canvas");
    check(color_jitter >= 0 && background_noise >= 0, "noise levels must be nonnegative");
    check(!video || (sequences_per_class >= 1 && frames_per_sequence >= 1), "video needs sequences and frames");
    check(max_shift >= 0, "frame shift must be nonnegative");
    check(embedding_dim >= 4, "embedding dimension must be at least 4");
}

std::vector<semantics::WordEmbedding> grounded_embeddings(int dimension)
{
    require(dimension >= 4, ErrorKind::InvalidArgument, "embedding dimension must be at least 4");
    std::vector<semantics::WordEmbedding> out;
    for (const ColorName& c : palette()) {
        std::vector<double> v(static_cast<std::size_t>(dimension), 0.0);
        for (int i = 0; i < 3; ++i)
            v[static_cast<std::size_t>(i)] = 2.0 * c.rgb[i] / 255.0 - 1.0;
        out.push_back({c.name, std::move(v)});
    }
    for (ShapeKind k : kShapes) {
        const std::string word(to_string(k));
        Rng rng(fnv1a(word));
        std::vector<double> v(static_cast<std::size_t>(dimension), 0.0);
        double norm = 0.0;
        for (int i = 3; i < dimension; ++i) {
            v[static_cast<std::size_t>(i)] = rng.normal();
            norm += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
        }
        for (double& x : v)
            x /= std::sqrt(norm);
        out.push_back({word, std::move(v)});
    }
    return out;
}

namespace {

class Painter {
public:
    Painter(const SynthConfig& cfg, const std::vector<ClassSpec>& specs) : cfg_(cfg), specs_(specs) {}

    ShapeInstance make(int cls, Rng& rng) const
    {
        const ClassSpec& spec = specs_[static_cast<std::size_t>(cls)];
        ShapeInstance s;
        s.class_index = cls;
        s.shape = spec.shape;
        s.radius = rng.uniform(cfg_.min_radius, cfg_.max_radius);
        s.cx = rng.uniform(s.radius, cfg_.canvas - s.radius);
        s.cy = rng.uniform(s.radius, cfg_.canvas - s.radius);
        const auto& base = palette()[static_cast<std::size_t>(spec.color)].rgb;
        for (int c = 0; c < 3; ++c)
            s.rgb[c] = clamp_byte(base[c] + rng.range(-cfg_.color_jitter, cfg_.color_jitter));
        return s;
    }

    /// Moves `s` to a spot that keeps some distance from `placed`, if one is found.
    void spread(ShapeInstance& s, const std::vector<ShapeInstance>& placed, Rng& rng) const
    {
        for (int attempt = 0; attempt < 50; ++attempt) {
            bool clear = true;
            for (const ShapeInstance& o : placed) {
                const double d = std::hypot(s.cx - o.cx, s.cy - o.cy);
                clear = clear && d >= 0.9 * (s.radius + o.radius);
            }
            if (clear)
                return;
            s.cx = rng.uniform(s.radius, cfg_.canvas - s.radius);
            s.cy = rng.uniform(s.radius, cfg_.canvas - s.radius);
        }
    }

    std::vector<int> distractor_classes(int cls, int room, Rng& rng) const
    {
        std::vector<int> others;
        for (int c = 0; c < cfg_.n_classes; ++c)
            if (c != cls)
                others.push_back(c);
        const int count =
            std::min({rng.range(0, cfg_.max_distractors), static_cast<int>(others.size()), std::max(room, 0)});
        for (int i = 0; i < count; ++i)
            std::swap(others[static_cast<std::size_t>(i)],
                      others[static_cast<std::size_t>(i) + rng.below(others.size() - static_cast<std::size_t>(i))]);
        others.resize(static_cast<std::size_t>(count));
        return others;
    }

    image::Image paint(const std::vector<ShapeInstance>& shapes, Rng& rng) const
    {
        const int n = cfg_.canvas;
        image::Image img(n, n);
        const double gray = rng.uniform(70.0, 130.0);
        double tint[3];
        for (double& t : tint)
            t = rng.uniform(-10.0, 10.0);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                for (int c = 0; c < 3; ++c)
                    img.pixel(x, y)[c] = clamp_byte(gray + tint[c]);
        for (const ShapeInstance& s : shapes)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if (covers(s, x, y))
                        for (int c = 0; c < 3; ++c)
                            img.pixel(x, y)[c] = s.rgb[c];
        const int noise = cfg_.background_noise;
        if (noise > 0)
            for (std::uint8_t& v : img.rgb)
                v = clamp_byte(v + rng.range(-noise, noise));
        return img;
    }

private:
    const SynthConfig& cfg_;
    const std::vector<ClassSpec>& specs_;
};

void write_lines(const fs::path& path, const std::vector<std::string>& lines)
{
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    for (const std::string& l : lines)
        out << l << '\n';
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

std::string numbered(const char* prefix, int i, int width)
{
    std::string digits = std::to_string(i);
    if (static_cast<int>(digits.size()) < width)
        digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return prefix + digits;
}

}  // namespace

episodes::DatasetManifest generate(const fs::path& root, const SynthConfig& config)
{
    config.validate();
    const std::vector<ClassSpec> specs = class_specs(config.n_classes);
    const Painter painter(config, specs);

    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "annotations", ec);
    require(fs::is_directory(root / "images") && fs::is_directory(root / "annotations"), ErrorKind::Io,
            "cannot create dataset directories under " + root.string());

    std::vector<std::string> names;
    for (const ClassSpec& s : specs)
        names.push_back(s.name);
    write_lines(root / "classes.txt", names);

    std::ofstream index(root / "shapes.jsonl");
    require(static_cast<bool>(index), ErrorKind::Io, "cannot write shapes.jsonl");
    auto emit = [&](const std::string& stem, const std::vector<ShapeInstance>& shapes, Rng& rng) {
        const image::Image img = painter.paint(shapes, rng);
        image::write_png(root / "images" / (stem + ".png"), img);
        image::write_labels(root / "annotations" / (stem + ".png"), rasterize_labels(shapes, config.canvas, config.canvas));
        nlohmann::json line = {{"image", "images/" + stem + ".png"},
                               {"annotation", "annotations/" + stem + ".png"},
                               {"width", config.canvas},
                               {"height", config.canvas},
                               {"shapes", nlohmann::json::array()}};
        for (const ShapeInstance& s : shapes)
            line["shapes"].push_back(s.to_json());
        index << line.dump() << '\n';
    };

    if (!config.video) {
        for (int cls = 0; cls < config.n_classes; ++cls) {
            for (int j = 0; j < config.images_per_class; ++j) {
                const int item = cls * config.images_per_class + j;
                Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(item)));
                std::vector<ShapeInstance> shapes;
                const int own = rng.range(1, config.max_instances);
                for (int i = 0; i < own; ++i) {
                    ShapeInstance s = painter.make(cls, rng);
                    painter.spread(s, shapes, rng);
                    shapes.push_back(s);
                }
                for (int d : painter.distractor_classes(cls, config.max_shapes - own, rng)) {
                    ShapeInstance s = painter.make(d, rng);
                    painter.spread(s, shapes, rng);
                    shapes.push_back(s);
                }
                for (std::size_t i = shapes.size(); i > 1; --i)
                    std::swap(shapes[i - 1], shapes[rng.below(i)]);
                emit(numbered("img_", item, 5), shapes, rng);
            }
        }
    } else {
        std::vector<std::string> sequences;
        for (int cls = 0; cls < config.n_classes; ++cls) {
            for (int q = 0; q < config.sequences_per_class; ++q) {
                const int item = cls * config.sequences_per_class + q;
                const std::string name = numbered("seq_", item, 4);
                sequences.push_back(name);
                fs::create_directories(root / "images" / name, ec);
                fs::create_directories(root / "annotations" / name, ec);
                Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(item)));

                // Distractors first so the sequence's own object is never occluded.
                std::vector<ShapeInstance> shapes;
                for (int d : painter.distractor_classes(cls, config.max_shapes - 1, rng)) {
                    ShapeInstance s = painter.make(d, rng);
                    painter.spread(s, shapes, rng);
                    shapes.push_back(s);
                }
                ShapeInstance own = painter.make(cls, rng);
                painter.spread(own, shapes, rng);
                shapes.push_back(own);

                // Integer velocities with |v| <= max_shift, reflected at the canvas border.
                std::vector<std::pair<int, int>> velocity;
                const int m = config.max_shift;
                for (std::size_t i = 0; i < shapes.size(); ++i) {
                    int vx = 0;
                    int vy = 0;
                    do {
                        vx = rng.range(-m, m);
                        vy = rng.range(-m, m);
                    } while (vx * vx + vy * vy > m * m);
                    velocity.emplace_back(vx, vy);
                }
                for (int f = 0; f < config.frames_per_sequence; ++f) {
                    if (f > 0) {
                        for (std::size_t i = 0; i < shapes.size(); ++i) {
                            ShapeInstance& s = shapes[i];
                            auto& [vx, vy] = velocity[i];
                            if (s.cx + vx < s.radius || s.cx + vx > config.canvas - s.radius)
                                vx = -vx;
                            if (s.cy + vy < s.radius || s.cy + vy > config.canvas - s.radius)
                                vy = -vy;
                            s.cx += vx;
                            s.cy += vy;
                        }
                    }
                    Rng frame_rng(derive_seed(config.seed ^ 0x5eedf00dULL,
                                              static_cast<std::uint64_t>(item) * 4096 + static_cast<std::uint64_t>(f)));
                    emit(name + "/" + numbered("frame_", f, 3), shapes, frame_rng);
                }
            }
        }
        write_lines(root / "sequences.txt", sequences);
    }
    index.close();
    require(static_cast<bool>(index), ErrorKind::Io, "write failed for shapes.jsonl");

    semantics::save_embeddings(root / "embeddings.txt", grounded_embeddings(config.embedding_dim));
    return episodes::DatasetManifest::load(root);
}

}  // namespace fewshot::synth
