#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mmpkd/digest.hpp"
#include "mmpkd/synth_data.hpp"

namespace mmpkd::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DatasetError("short write to " + p.string());
}

std::string encode_f32(const Image& img) {
    std::string out(img.size() * 4, '\0');
    for (std::size_t i = 0; i < img.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.values[i]));
        for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    return out;
}

Image decode_f32(const std::string& bytes, std::size_t h, std::size_t w, const std::string& what) {
    if (bytes.size() != h * w * 4) {
        throw DatasetError(what + ": expected " + std::to_string(h * w * 4) + " bytes, found " +
                           std::to_string(bytes.size()));
    }
    Image img(h, w);
    for (std::size_t i = 0; i < img.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        img.values[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return img;
}

std::string encode_mask(const Mask& m) { return std::string(m.values.begin(), m.values.end()); }

Mask decode_mask(const std::string& bytes, std::size_t h, std::size_t w, const std::string& what) {
    if (bytes.size() != h * w) {
        throw DatasetError(what + ": expected " + std::to_string(h * w) + " bytes, found " + std::to_string(bytes.size()));
    }
    Mask m(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto v = static_cast<std::uint8_t>(bytes[i]);
        if (v > 1) throw DatasetError(what + ": mask byte " + std::to_string(i) + " is not 0/1");
        m.values[i] = v;
    }
    return m;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string encode_csv(const std::vector<Sample>& samples, std::size_t d) {
    std::string out = "id,label";
    for (std::size_t k = 0; k < d; ++k) out += ",x" + std::to_string(k);
    out += '\n';
    for (const auto& s : samples) {
        out += s.id + "," + std::to_string(s.label);
        for (double v : s.privileged) out += "," + format_double(v);
        out += '\n';
    }
    return out;
}

struct CsvRow {
    std::string id;
    int label = 0;
    std::vector<double> values;
};

std::vector<CsvRow> decode_csv(const std::string& text, std::size_t d, const std::string& what) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DatasetError(what + ": missing header");
    std::vector<CsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != d + 2) {
            throw DatasetError(what + ": row " + std::to_string(rows.size() + 1) + " has " +
                               std::to_string(cells.size()) + " cells, expected " + std::to_string(d + 2));
        }
        CsvRow r;
        r.id = cells[0];
        r.label = std::stoi(cells[1]);
        for (std::size_t k = 0; k < d; ++k) {
            char* end = nullptr;
            r.values.push_back(std::strtod(cells[k + 2].c_str(), &end));
            if (end == cells[k + 2].c_str()) throw DatasetError(what + ": unparsable value '" + cells[k + 2] + "'");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

// Files covered by the digest, in manifest order.
std::vector<std::string> referenced_files(const json& splits) {
    std::vector<std::string> files;
    for (Split sp : kAllSplits) {
        const auto& js = splits.at(split_name(sp));
        files.push_back(js.at("privileged_csv").get<std::string>());
        for (const auto& e : js.at("samples")) {
            files.push_back(e.at("image").get<std::string>());
            files.push_back(e.at("mask").get<std::string>());
        }
    }
    return files;
}

std::string content_digest(const fs::path& dir, const std::vector<std::string>& files) {
    Sha256 h;
    for (const auto& rel : files) {
        h.update(rel);
        h.update(std::string_view("\0", 1));
        h.update(read_file(dir / rel));
    }
    return h.hex();
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    json manifest;
    manifest["format"] = "mmpkd-dataset";
    manifest["schema_version"] = kDatasetSchemaVersion;
    manifest["height"] = ds.height;
    manifest["width"] = ds.width;
    manifest["privileged_dim"] = ds.privileged_dim;
    manifest["generator"] = ds.generator ? json(*ds.generator) : json(nullptr);
    json splits = json::object();
    for (Split sp : kAllSplits) {
        const auto name = split_name(sp);
        const std::string csv_name = name + "_privileged.csv";
        write_file(dir / csv_name, encode_csv(ds.split(sp), ds.privileged_dim));
        json entries = json::array();
        for (const auto& s : ds.split(sp)) {
            if (s.image.height != ds.height || s.image.width != ds.width) {
                throw DatasetError("sample " + s.id + " has image size inconsistent with dataset");
            }
            const std::string img = "images/" + s.id + ".f32";
            const std::string msk = "masks/" + s.id + ".u8";
            write_file(dir / img, encode_f32(s.image));
            write_file(dir / msk, encode_mask(s.roi_mask));
            json boxes = json::array();
            for (const auto& b : s.roi_boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
            entries.push_back({{"id", s.id}, {"index", s.index}, {"label", s.label}, {"image", img}, {"mask", msk},
                               {"boxes", boxes}});
        }
        splits[name] = {{"privileged_csv", csv_name}, {"samples", entries}};
    }
    manifest["splits"] = splits;
    manifest["digest"] = {{"algorithm", "sha256"}, {"value", content_digest(dir, referenced_files(splits))}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw DatasetError(std::string("manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "mmpkd-dataset") throw DatasetError("manifest.json: not an mmpkd dataset");
    const int version = manifest.value("schema_version", -1);
    if (version != kDatasetSchemaVersion) {
        throw DatasetError("unknown dataset schema version " + std::to_string(version) + " (supported: " +
                           std::to_string(kDatasetSchemaVersion) + ")");
    }
    const auto& splits = manifest.at("splits");
    const std::string expected = manifest.at("digest").at("value").get<std::string>();
    const std::string actual = content_digest(dir, referenced_files(splits));
    if (expected != actual) {
        throw DatasetError("corrupt dataset: content digest mismatch (manifest " + expected + ", files " + actual + ")");
    }

    Dataset ds;
    ds.height = manifest.at("height").get<std::size_t>();
    ds.width = manifest.at("width").get<std::size_t>();
    ds.privileged_dim = manifest.at("privileged_dim").get<std::size_t>();
    if (!manifest.at("generator").is_null()) ds.generator = manifest.at("generator").get<GeneratorConfig>();
    for (Split sp : kAllSplits) {
        const auto& js = splits.at(split_name(sp));
        const std::string csv_name = js.at("privileged_csv").get<std::string>();
        const auto rows = decode_csv(read_file(dir / csv_name), ds.privileged_dim, csv_name);
        const auto& entries = js.at("samples");
        if (rows.size() != entries.size()) throw DatasetError(csv_name + ": row count does not match manifest");
        auto& out = ds.split(sp);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            Sample s;
            s.id = e.at("id").get<std::string>();
            s.index = e.at("index").get<std::uint64_t>();
            s.label = e.at("label").get<int>();
            if (rows[i].id != s.id || rows[i].label != s.label) {
                throw DatasetError(csv_name + ": row " + std::to_string(i) + " (" + rows[i].id +
                                   ") disagrees with manifest entry " + s.id);
            }
            s.privileged = rows[i].values;
            const auto img = e.at("image").get<std::string>();
            const auto msk = e.at("mask").get<std::string>();
            s.image = decode_f32(read_file(dir / img), ds.height, ds.width, img);
            s.roi_mask = decode_mask(read_file(dir / msk), ds.height, ds.width, msk);
            for (const auto& b : e.at("boxes")) s.roi_boxes.push_back({b.at(0), b.at(1), b.at(2), b.at(3)});
            out.push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace mmpkd::data
