#include "mmpkd/vit.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mmpkd/rng.hpp"

namespace mmpkd::student {

using nn::Tensor;
using nlohmann::json;

void VitConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("vit config: " + m); };
    if (patch == 0 || image_height == 0 || image_width == 0) fail("sizes must be positive");
    if (image_height % patch != 0 || image_width % patch != 0) {
        fail("image " + std::to_string(image_width) + "x" + std::to_string(image_height) +
             " not divisible by patch " + std::to_string(patch));
    }
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (depth == 0 || mlp_hidden == 0) fail("depth and mlp_hidden must be positive");
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

void to_json(json& j, const VitConfig& c) {
    j = {{"image_height", c.image_height}, {"image_width", c.image_width}, {"patch", c.patch},
         {"dim", c.dim},                   {"depth", c.depth},             {"heads", c.heads},
         {"mlp_hidden", c.mlp_hidden},     {"init_std", c.init_std},       {"ln_eps", c.ln_eps},
         {"zero_head", c.zero_head}};
}

void from_json(const json& j, VitConfig& c) {
    VitConfig d;
    c.image_height = j.value("image_height", d.image_height);
    c.image_width = j.value("image_width", d.image_width);
    c.patch = j.value("patch", d.patch);
    c.dim = j.value("dim", d.dim);
    c.depth = j.value("depth", d.depth);
    c.heads = j.value("heads", d.heads);
    c.mlp_hidden = j.value("mlp_hidden", d.mlp_hidden);
    c.init_std = j.value("init_std", d.init_std);
    c.ln_eps = j.value("ln_eps", d.ln_eps);
    c.zero_head = j.value("zero_head", d.zero_head);
}

Tensor StudentViT::add_param(const std::string& name, nn::Shape shape) {
    auto t = Tensor::zeros(std::move(shape), true, name);
    params_.push_back(t);
    names_.push_back(name);
    return t;
}

void StudentViT::build_parameters() {
    const auto& c = cfg_;
    const std::size_t pp = c.patch * c.patch;
    add_param("patch_embed.weight", {pp, c.dim});
    add_param("patch_embed.bias", {c.dim});
    add_param("cls_token", {1, c.dim});
    add_param("pos_embed", {c.tokens(), c.dim});
    for (std::size_t l = 0; l < c.depth; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        add_param(p + "norm1.weight", {c.dim});
        add_param(p + "norm1.bias", {c.dim});
        add_param(p + "attn.qkv.weight", {c.dim, 3 * c.dim});
        add_param(p + "attn.qkv.bias", {3 * c.dim});
        add_param(p + "attn.proj.weight", {c.dim, c.dim});
        add_param(p + "attn.proj.bias", {c.dim});
        add_param(p + "norm2.weight", {c.dim});
        add_param(p + "norm2.bias", {c.dim});
        add_param(p + "mlp.fc1.weight", {c.dim, c.mlp_hidden});
        add_param(p + "mlp.fc1.bias", {c.mlp_hidden});
        add_param(p + "mlp.fc2.weight", {c.mlp_hidden, c.dim});
        add_param(p + "mlp.fc2.bias", {c.dim});
    }
    add_param("norm.weight", {c.dim});
    add_param("norm.bias", {c.dim});
    add_param("head.weight", {c.dim, 1});
    add_param("head.bias", {1});
}

StudentViT::StudentViT(VitConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    build_parameters();
    // weights: truncated normal; biases zero; norm scales one
    Rng rng = Rng::derive(seed, "student/init");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& name = names_[i];
        auto data = params_[i].mutable_data();
        const bool is_norm = name.find("norm") != std::string::npos;
        const bool is_bias = name.ends_with(".bias");
        if (is_norm && name.ends_with(".weight")) {
            std::fill(data.begin(), data.end(), 1.0);
        } else if (is_bias || (cfg_.zero_head && name == "head.weight")) {
            std::fill(data.begin(), data.end(), 0.0);
        } else {
            for (auto& v : data) v = rng.truncated_normal(cfg_.init_std);
        }
    }
}

Tensor& StudentViT::parameter(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return params_[i];
    throw std::out_of_range("no parameter named '" + name + "'");
}

std::size_t StudentViT::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

Tensor StudentViT::patchify(std::span<const Image* const> images) const {
    const auto& c = cfg_;
    const std::size_t gh = c.grid_h(), gw = c.grid_w(), P = c.patch;
    const std::size_t B = images.size();
    std::vector<double> out(B * gh * gw * P * P);
    std::size_t o = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const Image& img = *images[b];
        if (img.height != c.image_height || img.width != c.image_width) {
            throw std::invalid_argument("student expects " + std::to_string(c.image_width) + "x" +
                                        std::to_string(c.image_height) + " images, got " + std::to_string(img.width) +
                                        "x" + std::to_string(img.height));
        }
        for (std::size_t py = 0; py < gh; ++py)
            for (std::size_t px = 0; px < gw; ++px)
                for (std::size_t y = 0; y < P; ++y)
                    for (std::size_t x = 0; x < P; ++x) out[o++] = img(py * P + y, px * P + x);
    }
    return Tensor::from_data({B * gh * gw, P * P}, std::move(out));
}

ForwardResult StudentViT::forward(std::span<const Image* const> images, bool record_attention) const {
    return forward(std::span<const Tensor>(params_), images, record_attention);
}

ForwardResult StudentViT::forward(std::span<const Tensor> params, std::span<const Image* const> images,
                                  bool record_attention) const {
    if (images.empty()) throw std::invalid_argument("forward: empty batch");
    if (params.size() != params_.size()) throw std::invalid_argument("forward: wrong number of parameter tensors");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape() != params_[i].shape()) {
            throw nn::ShapeError("forward: " + names_[i] + " expects " + nn::shape_str(params_[i].shape()) + ", got " +
                                 nn::shape_str(params[i].shape()));
        }
    const auto& c = cfg_;
    const std::size_t B = images.size(), T = c.tokens(), D = c.dim, Hd = c.heads, dh = D / Hd;
    std::size_t k = 0;
    auto next = [&]() -> const Tensor& { return params[k++]; };

    const Tensor& pe_w = next();
    const Tensor& pe_b = next();
    const Tensor& cls = next();
    const Tensor& pos = next();

    auto emb = nn::reshape(nn::add(nn::matmul(patchify(images), pe_w), pe_b), {B, c.patches(), D});
    auto tokens = nn::concat({nn::broadcast_to(cls, {B, 1, D}), emb}, 1);
    auto h = nn::reshape(nn::add(tokens, pos), {B * T, D});

    ForwardResult result;
    if (record_attention) {
        result.attention.resize(B);
        for (auto& r : result.attention) {
            r.heads = Hd;
            r.tokens = T;
            r.grid_h = c.grid_h();
            r.grid_w = c.grid_w();
            r.image_height = c.image_height;
            r.image_width = c.image_width;
            r.layers.reserve(c.depth);
        }
    }
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < c.depth; ++l) {
        const Tensor& n1g = next();
        const Tensor& n1b = next();
        const Tensor& qkv_w = next();
        const Tensor& qkv_b = next();
        const Tensor& proj_w = next();
        const Tensor& proj_b = next();
        const Tensor& n2g = next();
        const Tensor& n2b = next();
        const Tensor& fc1_w = next();
        const Tensor& fc1_b = next();
        const Tensor& fc2_w = next();
        const Tensor& fc2_b = next();

        auto a = nn::layer_norm(h, n1g, n1b, c.ln_eps);
        auto qkv = nn::add(nn::matmul(a, qkv_w), qkv_b);
        auto split = nn::permute(nn::reshape(qkv, {B, T, 3, Hd, dh}), {2, 0, 3, 1, 4});
        auto q = nn::reshape(nn::slice(split, 0, 0, 1), {B * Hd, T, dh});
        auto kk = nn::reshape(nn::slice(split, 0, 1, 2), {B * Hd, T, dh});
        auto v = nn::reshape(nn::slice(split, 0, 2, 3), {B * Hd, T, dh});
        auto probs = nn::softmax(nn::scale(nn::bmm(q, kk, true), attn_scale));
        if (record_attention) {
            const auto pd = probs.data();
            const std::size_t block = Hd * T * T;
            for (std::size_t b = 0; b < B; ++b)
                result.attention[b].layers.emplace_back(pd.begin() + static_cast<std::ptrdiff_t>(b * block),
                                                        pd.begin() + static_cast<std::ptrdiff_t>((b + 1) * block));
        }
        auto ctx = nn::reshape(nn::permute(nn::reshape(nn::bmm(probs, v), {B, Hd, T, dh}), {0, 2, 1, 3}), {B * T, D});
        h = nn::add(h, nn::add(nn::matmul(ctx, proj_w), proj_b));

        auto m = nn::layer_norm(h, n2g, n2b, c.ln_eps);
        m = nn::gelu(nn::add(nn::matmul(m, fc1_w), fc1_b));
        m = nn::add(nn::matmul(m, fc2_w), fc2_b);
        h = nn::add(h, m);
    }
    const Tensor& nf_g = next();
    const Tensor& nf_b = next();
    const Tensor& head_w = next();
    const Tensor& head_b = next();
    h = nn::layer_norm(h, nf_g, nf_b, c.ln_eps);
    auto cls_out = nn::reshape(nn::slice(nn::reshape(h, {B, T, D}), 1, 0, 1), {B, D});
    result.logits = nn::reshape(nn::add(nn::matmul(cls_out, head_w), head_b), {B});
    return result;
}

ForwardResult StudentViT::forward(const std::vector<Image>& images, bool record_attention) const {
    std::vector<const Image*> ptrs;
    ptrs.reserve(images.size());
    for (const auto& im : images) ptrs.push_back(&im);
    return forward(std::span<const Image* const>(ptrs), record_attention);
}

std::pair<double, AttentionRecord> StudentViT::infer(const Image& image) const {
    const Image* p = &image;
    auto r = forward(std::span<const Image* const>(&p, 1), true);
    return {r.logits.at(0), std::move(r.attention.front())};
}

std::string StudentViT::weight_bytes() const {
    std::string out;
    for (const auto& p : params_) {
        const auto d = p.data();
        out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint codec: little-endian, see docs/formats.md
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'M', 'P', 'K', 'D', 'V', 'I', 'T'};

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& s, double v) { put_u64(s, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::string bytes) : b_(std::move(bytes)) {}
    std::uint64_t u(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    double f64() { return std::bit_cast<double>(u(8)); }
    std::string str(std::size_t n) {
        need(n);
        auto s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw std::runtime_error("checkpoint truncated");
    }
    std::string b_;
    std::size_t pos_ = 0;
};

}  // namespace

void StudentViT::save(const std::filesystem::path& path) const {
    std::string s(kMagic, sizeof kMagic);
    put_u32(s, kCheckpointVersion);
    for (auto v : {cfg_.image_height, cfg_.image_width, cfg_.patch, cfg_.dim, cfg_.depth, cfg_.heads, cfg_.mlp_hidden})
        put_u32(s, static_cast<std::uint32_t>(v));
    put_f64(s, cfg_.ln_eps);
    put_f64(s, cfg_.init_std);
    put_u32(s, cfg_.zero_head ? 1 : 0);
    put_u32(s, static_cast<std::uint32_t>(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        put_u32(s, static_cast<std::uint32_t>(names_[i].size()));
        s += names_[i];
        put_u32(s, static_cast<std::uint32_t>(params_[i].rank()));
        for (auto d : params_[i].shape()) put_u32(s, static_cast<std::uint32_t>(d));
        for (double v : params_[i].data()) put_f64(s, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

StudentViT StudentViT::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes));
    if (r.str(8) != std::string(kMagic, 8)) throw std::runtime_error(path.string() + ": not an mmpkd checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    StudentViT m;
    m.cfg_.image_height = r.u32();
    m.cfg_.image_width = r.u32();
    m.cfg_.patch = r.u32();
    m.cfg_.dim = r.u32();
    m.cfg_.depth = r.u32();
    m.cfg_.heads = r.u32();
    m.cfg_.mlp_hidden = r.u32();
    m.cfg_.ln_eps = r.f64();
    m.cfg_.init_std = r.f64();
    m.cfg_.zero_head = r.u32() != 0;
    m.cfg_.validate();
    m.build_parameters();
    const auto count = r.u32();
    if (count != m.params_.size()) throw std::runtime_error("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
        const auto name = r.str(r.u32());
        if (name != m.names_[i]) throw std::runtime_error("checkpoint parameter " + name + " out of order");
        const auto rank = r.u32();
        nn::Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
        if (shape != m.params_[i].shape()) throw std::runtime_error("checkpoint parameter " + name + " has wrong shape");
        for (auto& v : m.params_[i].mutable_data()) v = r.f64();
    }
    if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
    return m;
}

// ---------------------------------------------------------------------------
// Attention maps
// ---------------------------------------------------------------------------

std::string method_name(ExtractionMethod m) { return m == ExtractionMethod::LastCls ? "last_cls" : "rollout"; }

ExtractionMethod parse_method(const std::string& s) {
    if (s == "last_cls") return ExtractionMethod::LastCls;
    if (s == "rollout") return ExtractionMethod::Rollout;
    throw std::invalid_argument("unknown attention extraction method '" + s + "' (expected last_cls or rollout)");
}

AttentionMap extract_attention_map(const AttentionRecord& attn, ExtractionMethod method) {
    if (attn.layers.empty()) throw std::invalid_argument("attention record is empty");
    const std::size_t T = attn.tokens, Hd = attn.heads;
    if (attn.grid_h * attn.grid_w + 1 != T) throw std::invalid_argument("attention record grid does not match tokens");

    auto head_mean = [&](std::size_t layer) {
        std::vector<double> a(T * T, 0.0);
        for (std::size_t h = 0; h < Hd; ++h)
            for (std::size_t i = 0; i < T * T; ++i) a[i] += attn.layers[layer][h * T * T + i];
        for (auto& v : a) v /= static_cast<double>(Hd);
        return a;
    };

    std::vector<double> cls_row(T);
    if (method == ExtractionMethod::LastCls) {
        const auto a = head_mean(attn.layers.size() - 1);
        std::copy_n(a.begin(), T, cls_row.begin());
    } else {
        std::vector<double> rollout(T * T, 0.0);
        for (std::size_t i = 0; i < T; ++i) rollout[i * T + i] = 1.0;
        for (std::size_t l = 0; l < attn.layers.size(); ++l) {
            auto a = head_mean(l);
            for (std::size_t i = 0; i < T; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    a[i * T + j] = 0.5 * a[i * T + j] + (i == j ? 0.5 : 0.0);
                    s += a[i * T + j];
                }
                for (std::size_t j = 0; j < T; ++j) a[i * T + j] /= s;
            }
            std::vector<double> next(T * T, 0.0);
            for (std::size_t i = 0; i < T; ++i)
                for (std::size_t k = 0; k < T; ++k) {
                    const double aik = a[i * T + k];
                    for (std::size_t j = 0; j < T; ++j) next[i * T + j] += aik * rollout[k * T + j];
                }
            rollout = std::move(next);
        }
        std::copy_n(rollout.begin(), T, cls_row.begin());
    }
    AttentionMap out;
    out.grid = Grid<double>(attn.grid_h, attn.grid_w);
    std::copy(cls_row.begin() + 1, cls_row.end(), out.grid.values.begin());
    auto up = upsample_map(out.grid, attn.image_height, attn.image_width);
    out.normalized = std::move(up.map);
    out.constant = up.constant;
    return out;
}

UpsampledMap upsample_map(const Grid<double>& grid, std::size_t height, std::size_t width) {
    if (grid.size() == 0 || height == 0 || width == 0) throw std::invalid_argument("upsample_map: empty grid or target");
    for (double v : grid.values)
        if (!std::isfinite(v)) throw std::invalid_argument("upsample_map: grid is not finite");
    const auto [lo_it, hi_it] = std::minmax_element(grid.values.begin(), grid.values.end());
    UpsampledMap out{Image(height, width, 0.5), false};
    if (*lo_it == *hi_it) {
        out.constant = true;
        return out;
    }
    // corner-aligned source coordinate along one axis
    auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
        if (n_out == 1 || n_in == 1) return std::pair<std::size_t, double>{0, 0.0};
        const double s = static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
        auto i0 = static_cast<std::size_t>(std::floor(s));
        if (i0 >= n_in - 1) i0 = n_in - 2;
        return std::pair<std::size_t, double>{i0, s - static_cast<double>(i0)};
    };
    const std::size_t gh = grid.height, gw = grid.width;
    for (std::size_t y = 0; y < height; ++y) {
        const auto [y0, fy] = coord(y, height, gh);
        const std::size_t y1 = gh > 1 ? y0 + 1 : y0;
        for (std::size_t x = 0; x < width; ++x) {
            const auto [x0, fx] = coord(x, width, gw);
            const std::size_t x1 = gw > 1 ? x0 + 1 : x0;
            const double top = grid(y0, x0) * (1.0 - fx) + grid(y0, x1) * fx;
            const double bot = grid(y1, x0) * (1.0 - fx) + grid(y1, x1) * fx;
            out.map(y, x) = top * (1.0 - fy) + bot * fy;
        }
    }
    const auto [mn, mx] = std::minmax_element(out.map.values.begin(), out.map.values.end());
    const double lo = *mn, span = *mx - *mn;
    for (auto& v : out.map.values) v = (v - lo) / span;
    return out;
}

}  // namespace mmpkd::student
