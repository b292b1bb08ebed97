#include "mindreg/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace mindreg {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;
constexpr std::int16_t kFloat32 = 16;
constexpr std::int16_t kInt16 = 4;
constexpr std::int16_t kIntentVector = 1007;

template <typename T>
T get(const std::vector<char>& buf, size_t offset) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), buf.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

template <typename T>
void put(std::vector<char>& buf, size_t offset, T value) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    std::memcpy(buf.data() + offset, bytes.data(), sizeof(T));
}

struct RawVolume {
    GridGeometry geometry;
    std::array<int, 8> dim{};
    std::int16_t datatype = kFloat32;
    std::vector<double> values;  // file order, first index fastest

    Eigen::Index extra() const {
        Eigen::Index e = 1;
        for (int d = 4; d <= 7; ++d) e *= dim[d];
        return e;
    }
};

std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RawVolume read_raw(const std::filesystem::path& path) {
    const std::vector<char> buf = read_bytes(path);
    const std::string name = path.string();
    if (buf.size() >= 2 && static_cast<unsigned char>(buf[0]) == 0x1f && static_cast<unsigned char>(buf[1]) == 0x8b)
        throw FormatError(FormatErrorCode::unsupported_compression, name + ": compressed volumes are not supported");
    if (buf.size() < size_t(kHeaderSize))
        throw FormatError(FormatErrorCode::malformed_header, name + ": file shorter than a NIfTI-1 header");
    const std::int32_t sizeof_hdr = get<std::int32_t>(buf, 0);
    if (sizeof_hdr != kHeaderSize) {
        if (std::int32_t(__builtin_bswap32(std::uint32_t(sizeof_hdr))) == kHeaderSize)
            throw FormatError(FormatErrorCode::unsupported_endianness, name + ": big-endian volumes are not supported");
        throw FormatError(FormatErrorCode::malformed_header, name + ": bad header size");
    }
    if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0)
        throw FormatError(FormatErrorCode::malformed_header, name + ": not a single-file NIfTI-1 volume");

    RawVolume raw;
    for (int d = 0; d < 8; ++d) raw.dim[d] = get<std::int16_t>(buf, 40 + 2 * d);
    const int ndim = raw.dim[0];
    if (ndim < 1 || ndim > 7) throw FormatError(FormatErrorCode::malformed_header, name + ": bad dimension count");
    for (int d = 1; d < 8; ++d) {
        if (d > ndim) raw.dim[d] = 1;
        if (raw.dim[d] < 1) throw FormatError(FormatErrorCode::malformed_header, name + ": nonpositive dimension");
    }
    raw.datatype = get<std::int16_t>(buf, 70);
    const std::int16_t bitpix = get<std::int16_t>(buf, 72);
    if (raw.datatype != kFloat32 && raw.datatype != kInt16)
        throw FormatError(FormatErrorCode::unsupported_dtype,
                          name + ": unsupported datatype " + std::to_string(raw.datatype));
    const int bytes = raw.datatype == kFloat32 ? 4 : 2;
    if (bitpix != 8 * bytes) throw FormatError(FormatErrorCode::malformed_header, name + ": bitpix does not match datatype");

    const float slope = get<float>(buf, 112), inter = get<float>(buf, 116);
    if (!(slope == 0.0f || slope == 1.0f) || inter != 0.0f)
        throw FormatError(FormatErrorCode::unsupported_dtype, name + ": intensity scaling is not supported");

    Eigen::Vector3d spacing, origin = Eigen::Vector3d::Zero();
    for (int a = 0; a < 3; ++a) spacing[a] = get<float>(buf, 76 + 4 * (a + 1));
    const std::int16_t qform = get<std::int16_t>(buf, 252), sform = get<std::int16_t>(buf, 254);
    if (sform > 0) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const float v = get<float>(buf, 280 + 16 * r + 4 * c);
                if (r != c && v != 0.0f)
                    throw FormatError(FormatErrorCode::malformed_header, name + ": non-diagonal affine");
            }
        for (int r = 0; r < 3; ++r) origin[r] = get<float>(buf, 280 + 16 * r + 12);
    } else if (qform > 0) {
        for (int q = 0; q < 3; ++q)
            if (get<float>(buf, 256 + 4 * q) != 0.0f)
                throw FormatError(FormatErrorCode::malformed_header, name + ": rotated affine");
        for (int r = 0; r < 3; ++r) origin[r] = get<float>(buf, 268 + 4 * r);
    }
    try {
        raw.geometry = GridGeometry({raw.dim[1], raw.dim[2], raw.dim[3]}, spacing, origin);
    } catch (const DataError& e) {
        throw FormatError(FormatErrorCode::malformed_header, name + ": " + e.what());
    }

    const float vox_offset = get<float>(buf, 108);
    if (!(vox_offset >= float(kVoxOffset)) || vox_offset != std::floor(vox_offset))
        throw FormatError(FormatErrorCode::malformed_header, name + ": bad data offset");
    const size_t offset = size_t(vox_offset);
    const size_t count = size_t(raw.geometry.voxel_count()) * size_t(raw.extra());
    if (buf.size() != offset + count * bytes)
        throw FormatError(FormatErrorCode::size_mismatch, name + ": payload size does not match header dimensions");
    raw.values.resize(count);
    for (size_t v = 0; v < count; ++v)
        raw.values[v] = raw.datatype == kFloat32 ? double(get<float>(buf, offset + 4 * v))
                                                 : double(get<std::int16_t>(buf, offset + 2 * v));
    return raw;
}

void write_raw(const RawVolume& raw, int ndim, std::int16_t intent, const std::filesystem::path& path) {
    const int bytes = raw.datatype == kFloat32 ? 4 : 2;
    std::vector<char> buf(kVoxOffset + raw.values.size() * bytes, 0);
    put<std::int32_t>(buf, 0, kHeaderSize);
    put<char>(buf, 38, 'r');
    for (int d = 0; d < 8; ++d) put<std::int16_t>(buf, 40 + 2 * d, std::int16_t(d == 0 ? ndim : raw.dim[d]));
    put<std::int16_t>(buf, 68, intent);
    put<std::int16_t>(buf, 70, raw.datatype);
    put<std::int16_t>(buf, 72, std::int16_t(8 * bytes));
    put<float>(buf, 76, 1.0f);
    for (int a = 0; a < 3; ++a) put<float>(buf, 76 + 4 * (a + 1), float(raw.geometry.spacing[a]));
    for (int d = 4; d < 8; ++d) put<float>(buf, 76 + 4 * d, 1.0f);
    put<float>(buf, 108, float(kVoxOffset));
    put<char>(buf, 123, 2);  // millimetres
    put<std::int16_t>(buf, 252, 1);
    put<std::int16_t>(buf, 254, 1);
    for (int r = 0; r < 3; ++r) {
        put<float>(buf, 268 + 4 * r, float(raw.geometry.origin[r]));
        put<float>(buf, 280 + 16 * r + 4 * r, float(raw.geometry.spacing[r]));
        put<float>(buf, 280 + 16 * r + 12, float(raw.geometry.origin[r]));
    }
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    for (size_t v = 0; v < raw.values.size(); ++v) {
        if (raw.datatype == kFloat32) put<float>(buf, kVoxOffset + 4 * v, float(raw.values[v]));
        else put<std::int16_t>(buf, kVoxOffset + 2 * v, std::int16_t(raw.values[v]));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot write " + path.string());
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot write " + path.string());
}

// Position in file order of voxel `idx` (last axis fastest in memory) and
// component `c`.
size_t file_index(const GridGeometry& g, Eigen::Index idx, int c) {
    const Eigen::Array3i p = g.coordinates(idx);
    const auto& n = g.shape;
    return size_t(p[0]) + size_t(n[0]) * (size_t(p[1]) + size_t(n[1]) * (size_t(p[2]) + size_t(n[2]) * size_t(c)));
}

RawVolume make_raw(const GridGeometry& g, int components, int component_dim, std::int16_t datatype) {
    RawVolume raw;
    raw.geometry = g;
    raw.dim = {0, g.shape[0], g.shape[1], g.shape[2], 1, 1, 1, 1};
    raw.dim[component_dim] = components;
    raw.datatype = datatype;
    raw.values.resize(size_t(g.voxel_count()) * components);
    return raw;
}

} // namespace

void write_volume(const ScalarVolume& vol, const std::filesystem::path& path) {
    RawVolume raw = make_raw(vol.geometry, 1, 4, kFloat32);
    for (Eigen::Index x = 0; x < vol.size(); ++x) raw.values[file_index(vol.geometry, x, 0)] = vol.data[x];
    write_raw(raw, 3, 0, path);
}

void write_volume(const LabelVolume& labels, const std::filesystem::path& path) {
    RawVolume raw = make_raw(labels.geometry, 1, 4, kInt16);
    for (Eigen::Index x = 0; x < labels.size(); ++x) {
        const int v = labels.data[x];
        if (v < 0 || v > std::numeric_limits<std::int16_t>::max())
            throw DataError("label values must lie in [0, 32767]");
        raw.values[file_index(labels.geometry, x, 0)] = v;
    }
    write_raw(raw, 3, 0, path);
}

void write_volume(const VectorField& field, const std::filesystem::path& path) {
    RawVolume raw = make_raw(field.geometry, 3, 5, kFloat32);
    for (Eigen::Index x = 0; x < field.size(); ++x)
        for (int c = 0; c < 3; ++c) raw.values[file_index(field.geometry, x, c)] = field.data(c, x);
    write_raw(raw, 5, kIntentVector, path);
}

void write_channels(const std::vector<ScalarVolume>& channels, const std::filesystem::path& path) {
    if (channels.empty()) throw DataError("write_channels: no channels");
    const GridGeometry& g = channels.front().geometry;
    for (const auto& ch : channels) require_same_geometry(ch.geometry, g, "write_channels");
    RawVolume raw = make_raw(g, int(channels.size()), 4, kFloat32);
    for (size_t c = 0; c < channels.size(); ++c)
        for (Eigen::Index x = 0; x < channels[c].size(); ++x)
            raw.values[file_index(g, x, int(c))] = channels[c].data[x];
    write_raw(raw, 4, 0, path);
}

ScalarVolume read_scalar(const std::filesystem::path& path) {
    const RawVolume raw = read_raw(path);
    if (raw.extra() != 1) throw DataError(path.string() + ": expected a scalar volume");
    ScalarVolume out(raw.geometry);
    for (Eigen::Index x = 0; x < out.size(); ++x) out.data[x] = raw.values[file_index(raw.geometry, x, 0)];
    return out;
}

LabelVolume read_labels(const std::filesystem::path& path) {
    const RawVolume raw = read_raw(path);
    if (raw.extra() != 1) throw DataError(path.string() + ": expected a label volume");
    if (raw.datatype != kInt16)
        throw FormatError(FormatErrorCode::unsupported_dtype, path.string() + ": labels must be stored as int16");
    LabelVolume out(raw.geometry);
    for (Eigen::Index x = 0; x < out.size(); ++x) {
        const double v = raw.values[file_index(raw.geometry, x, 0)];
        if (v < 0) throw DataError(path.string() + ": negative label");
        out.data[x] = std::int32_t(v);
    }
    return out;
}

VectorField read_field(const std::filesystem::path& path) {
    const RawVolume raw = read_raw(path);
    if (raw.dim[4] != 1 || raw.dim[5] != 3 || raw.dim[6] != 1 || raw.dim[7] != 1)
        throw DataError(path.string() + ": expected a 5-D vector field with three components");
    VectorField out(raw.geometry);
    for (Eigen::Index x = 0; x < out.size(); ++x)
        for (int c = 0; c < 3; ++c) out.data(c, x) = raw.values[file_index(raw.geometry, x, c)];
    return out;
}

std::vector<ScalarVolume> read_channels(const std::filesystem::path& path) {
    const RawVolume raw = read_raw(path);
    if (raw.dim[5] != 1 || raw.dim[6] != 1 || raw.dim[7] != 1)
        throw DataError(path.string() + ": expected a 4-D channel stack");
    std::vector<ScalarVolume> out(raw.dim[4], ScalarVolume(raw.geometry));
    for (int c = 0; c < raw.dim[4]; ++c)
        for (Eigen::Index x = 0; x < out[c].size(); ++x) out[c].data[x] = raw.values[file_index(raw.geometry, x, c)];
    return out;
}

AnyVolume read_volume(const std::filesystem::path& path) {
    const RawVolume raw = read_raw(path);
    if (raw.dim[5] == 3 && raw.dim[4] == 1 && raw.dim[6] == 1 && raw.dim[7] == 1) return read_field(path);
    if (raw.datatype == kInt16) return read_labels(path);
    return read_scalar(path);
}

// ---------------------------------------------------------------- JSON

namespace {

template <typename T>
T field(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const char* what) {
    if (!j.is_object()) throw DataError(std::string(what) + ": expected an object");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw DataError(std::string(what) + ": unknown key '" + k + "'");
}

template <typename Fn>
auto guarded(const char* what, Fn fn) {
    try {
        return fn();
    } catch (const Json::exception& e) {
        throw DataError(std::string(what) + ": " + e.what());
    }
}

Json vec3(const Eigen::Vector3d& v) { return Json::array({v[0], v[1], v[2]}); }

Eigen::Vector3d vec3_from(const Json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("expected a three-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json terms(const LossTerms& t) {
    return {{"similarity", t.similarity}, {"diffusion", t.diffusion}, {"ndv", t.ndv}};
}

LossTerms terms_from(const Json& j) {
    return {j.at("similarity").get<double>(), j.at("diffusion").get<double>(), j.at("ndv").get<double>()};
}

Json weights_json(const LossWeights& w) {
    return {{"similarity", w.similarity},
            {"diffusion", w.diffusion},
            {"ndv", w.ndv},
            {"group_consistency", w.group_consistency},
            {"intermediate_stage_factor", w.intermediate_stage_factor}};
}

LossWeights weights_from(const Json& j, LossWeights w) {
    reject_unknown(j, {"similarity", "diffusion", "ndv", "group_consistency", "intermediate_stage_factor"},
                   "weights");
    w.similarity = field(j, "similarity", w.similarity);
    w.diffusion = field(j, "diffusion", w.diffusion);
    w.ndv = field(j, "ndv", w.ndv);
    w.group_consistency = field(j, "group_consistency", w.group_consistency);
    w.intermediate_stage_factor = field(j, "intermediate_stage_factor", w.intermediate_stage_factor);
    return w;
}

LossReport report_from(const Json& j) {
    LossReport r;
    r.level = j.at("level").get<int>();
    r.iteration = j.at("iteration").get<int>();
    r.weights = weights_from(j.at("weights"), {});
    r.forward = terms_from(j.at("forward"));
    r.backward = terms_from(j.at("backward"));
    r.group_consistency = j.at("group_consistency").get<double>();
    r.stage_losses = j.at("stage_losses").get<std::vector<double>>();
    r.stage_factors = j.at("stage_factors").get<std::vector<double>>();
    r.total = j.at("total").get<double>();
    return r;
}

const char* contrast_name(Contrast::Mode m) {
    switch (m) {
    case Contrast::Mode::identity: return "identity";
    case Contrast::Mode::inverted: return "inverted";
    case Contrast::Mode::gamma: return "gamma";
    case Contrast::Mode::monotone_lut: return "monotone_lut";
    }
    return "identity";
}

} // namespace

Json to_json(const GridGeometry& g) {
    return {{"shape", {g.shape[0], g.shape[1], g.shape[2]}}, {"spacing", vec3(g.spacing)}, {"origin", vec3(g.origin)}};
}

GridGeometry geometry_from_json(const Json& j) {
    return guarded("geometry", [&] {
        const auto s = j.at("shape").get<std::vector<int>>();
        if (s.size() != 3) throw DataError("geometry: shape needs three entries");
        return GridGeometry({s[0], s[1], s[2]}, vec3_from(j.at("spacing")), vec3_from(j.at("origin")));
    });
}

Json to_json(const LandmarkSet& lm) {
    Json arr = Json::array();
    for (size_t i = 0; i < lm.size(); ++i) arr.push_back({{"id", lm.identifiers[i]}, {"point", vec3(lm.points[i])}});
    return {{"landmarks", arr}};
}

LandmarkSet landmarks_from_json(const Json& j) {
    return guarded("landmarks", [&] {
        LandmarkSet lm;
        for (const auto& e : j.at("landmarks")) {
            lm.identifiers.push_back(e.at("id").get<std::string>());
            lm.points.push_back(vec3_from(e.at("point")));
        }
        return lm;
    });
}

Json to_json(const LossReport& r) {
    return {{"level", r.level},
            {"iteration", r.iteration},
            {"total", r.total},
            {"weights", weights_json(r.weights)},
            {"forward", terms(r.forward)},
            {"backward", terms(r.backward)},
            {"group_consistency", r.group_consistency},
            {"stage_losses", r.stage_losses},
            {"stage_factors", r.stage_factors}};
}

Json to_json(const BSplineField& f) {
    std::vector<double> coeffs(f.coefficients.data(), f.coefficients.data() + f.coefficients.size());
    return {{"image_geometry", to_json(f.image_geometry)},
            {"control_spacing", f.control_spacing},
            {"bound", f.bound()},
            {"control_shape", {f.control_shape[0], f.control_shape[1], f.control_shape[2]}},
            {"coefficients", coeffs}};
}

BSplineField bspline_from_json(const Json& j) {
    return guarded("stage", [&] {
        const GridGeometry g = geometry_from_json(j.at("image_geometry"));
        BSplineField f = BSplineField::zero(g, j.at("control_spacing").get<int>());
        const auto shape = j.at("control_shape").get<std::vector<int>>();
        if (shape.size() != 3 || shape[0] != f.control_shape[0] || shape[1] != f.control_shape[1] ||
            shape[2] != f.control_shape[2])
            throw DataError("stage: control shape does not match geometry and spacing");
        if (j.contains("bound") && j.at("bound").get<double>() != f.bound())
            throw DataError("stage: bound does not match control spacing");
        const auto coeffs = j.at("coefficients").get<std::vector<double>>();
        if (Eigen::Index(coeffs.size()) != f.coefficients.size())
            throw DataError("stage: coefficient count does not match control shape");
        std::copy(coeffs.begin(), coeffs.end(), f.coefficients.data());
        f.validate();
        return f;
    });
}

Json to_json(const RegistrationResult& r) {
    Json stages = Json::array();
    for (const auto& s : r.forward_stack.stages) stages.push_back(to_json(s));
    Json history = Json::array();
    for (const auto& rep : r.loss_history) history.push_back(to_json(rep));
    return {{"geometry", to_json(r.geometry)},
            {"forward_stages", stages},
            {"converged_flags", r.converged_flags},
            {"loss_history", history}};
}

RegistrationResult result_from_json(const Json& j) {
    return guarded("result", [&] {
        RegistrationResult r;
        r.geometry = geometry_from_json(j.at("geometry"));
        for (const auto& s : j.at("forward_stages")) {
            r.forward_stack.stages.push_back(bspline_from_json(s));
            require_same_geometry(r.forward_stack.stages.back().image_geometry, r.geometry, "result");
        }
        if (r.forward_stack.stages.empty()) throw DataError("result: no stages");
        r.backward_stack = inverse_of(r.forward_stack);
        r.converged_flags = j.at("converged_flags").get<std::vector<bool>>();
        for (const auto& rep : j.at("loss_history")) r.loss_history.push_back(report_from(rep));
        return r;
    });
}

Json to_json(const RegistrationConfig& c) {
    Json offsets = Json::array();
    for (const auto& o : c.mind.offsets) offsets.push_back({o[0], o[1], o[2]});
    return {{"levels", c.levels},
            {"iterations_per_level", c.iterations_per_level},
            {"final_phase_iterations", c.final_phase_iterations},
            {"learning_rate", c.learning_rate},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_epsilon", c.adam_epsilon},
            {"control_spacing_schedule", c.control_spacing_schedule},
            {"weights", weights_json(c.weights)},
            {"similarity_space", c.similarity_space == SimilaritySpace::mind ? "mind" : "raw"},
            {"mind",
             {{"sigma", c.mind.sigma},
              {"patch_radius", c.mind.patch_radius},
              {"variance_floor_rel", c.mind.variance_floor_rel},
              {"offsets", offsets}}},
            {"window_radius", c.window_radius},
            {"seed", c.seed},
            {"init_perturbation", c.init_perturbation}};
}

RegistrationConfig registration_config_from_json(const Json& j, RegistrationConfig c) {
    return guarded("config", [&] {
        reject_unknown(j,
                       {"levels", "iterations_per_level", "final_phase_iterations", "learning_rate", "adam_beta1",
                        "adam_beta2", "adam_epsilon", "control_spacing_schedule", "weights", "similarity_space",
                        "mind", "window_radius", "seed", "init_perturbation"},
                       "config");
        c.levels = field(j, "levels", c.levels);
        c.iterations_per_level = field(j, "iterations_per_level", c.iterations_per_level);
        c.final_phase_iterations = field(j, "final_phase_iterations", c.final_phase_iterations);
        c.learning_rate = field(j, "learning_rate", c.learning_rate);
        c.adam_beta1 = field(j, "adam_beta1", c.adam_beta1);
        c.adam_beta2 = field(j, "adam_beta2", c.adam_beta2);
        c.adam_epsilon = field(j, "adam_epsilon", c.adam_epsilon);
        c.control_spacing_schedule = field(j, "control_spacing_schedule", c.control_spacing_schedule);
        if (j.contains("weights")) c.weights = weights_from(j.at("weights"), c.weights);
        if (j.contains("similarity_space")) {
            const auto s = j.at("similarity_space").get<std::string>();
            if (s == "mind") c.similarity_space = SimilaritySpace::mind;
            else if (s == "raw") c.similarity_space = SimilaritySpace::raw_intensity;
            else throw DataError("config: similarity_space must be 'mind' or 'raw'");
        }
        if (j.contains("mind")) {
            const Json& m = j.at("mind");
            reject_unknown(m, {"sigma", "patch_radius", "variance_floor_rel", "offsets"}, "mind");
            c.mind.sigma = field(m, "sigma", c.mind.sigma);
            c.mind.patch_radius = field(m, "patch_radius", c.mind.patch_radius);
            c.mind.variance_floor_rel = field(m, "variance_floor_rel", c.mind.variance_floor_rel);
            if (m.contains("offsets")) {
                c.mind.offsets.clear();
                for (const auto& o : m.at("offsets")) {
                    const auto v = o.get<std::vector<int>>();
                    if (v.size() != 3) throw DataError("mind: offsets need three entries");
                    c.mind.offsets.emplace_back(v[0], v[1], v[2]);
                }
            }
        }
        c.window_radius = field(j, "window_radius", c.window_radius);
        c.seed = field(j, "seed", c.seed);
        c.init_perturbation = field(j, "init_perturbation", c.init_perturbation);
        c.validate();
        return c;
    });
}

Json to_json(const PhantomSpec& s) {
    return {{"shape", {s.shape[0], s.shape[1], s.shape[2]}},
            {"blob_count", s.blob_count},
            {"seed", s.seed},
            {"deformation_max", s.deformation_max},
            {"control_spacing", s.control_spacing},
            {"contrast",
             {{"mode", contrast_name(s.contrast.mode)}, {"gamma", s.contrast.gamma}, {"lut_seed", s.contrast.lut_seed}}},
            {"noise_sigma", s.noise_sigma}};
}

PhantomSpec phantom_spec_from_json(const Json& j, PhantomSpec s) {
    return guarded("spec", [&] {
        reject_unknown(j, {"shape", "blob_count", "seed", "deformation_max", "control_spacing", "contrast", "noise_sigma"},
                       "spec");
        if (j.contains("shape")) {
            const auto v = j.at("shape").get<std::vector<int>>();
            if (v.size() != 3) throw DataError("spec: shape needs three entries");
            s.shape = {v[0], v[1], v[2]};
        }
        s.blob_count = field(j, "blob_count", s.blob_count);
        s.seed = field(j, "seed", s.seed);
        s.deformation_max = field(j, "deformation_max", s.deformation_max);
        s.control_spacing = field(j, "control_spacing", s.control_spacing);
        s.noise_sigma = field(j, "noise_sigma", s.noise_sigma);
        if (j.contains("contrast")) {
            const Json& c = j.at("contrast");
            reject_unknown(c, {"mode", "gamma", "lut_seed"}, "contrast");
            const auto mode = field<std::string>(c, "mode", contrast_name(s.contrast.mode));
            if (mode == "identity") s.contrast.mode = Contrast::Mode::identity;
            else if (mode == "inverted") s.contrast.mode = Contrast::Mode::inverted;
            else if (mode == "gamma") s.contrast.mode = Contrast::Mode::gamma;
            else if (mode == "monotone_lut") s.contrast.mode = Contrast::Mode::monotone_lut;
            else throw DataError("spec: unknown contrast mode '" + mode + "'");
            s.contrast.gamma = field(c, "gamma", s.contrast.gamma);
            s.contrast.lut_seed = field(c, "lut_seed", s.contrast.lut_seed);
        }
        s.validate();
        return s;
    });
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatErrorCode::io_failure, "cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_json(const Json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw FormatError(FormatErrorCode::io_failure, "cannot write " + path.string());
}

} // namespace mindreg
