#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "mindreg/ensemble.hpp"
#include "mindreg/errors.hpp"
#include "mindreg/metrics.hpp"
#include "mindreg/registration.hpp"
#include "mindreg/synth.hpp"

namespace mindreg {

enum class FormatErrorCode { malformed_header, unsupported_dtype, unsupported_compression, unsupported_endianness,
                             size_mismatch, io_failure };

class FormatError : public DataError {
public:
    FormatError(FormatErrorCode code, const std::string& what) : DataError(what), code_(code) {}
    FormatErrorCode code() const noexcept { return code_; }

private:
    FormatErrorCode code_;
};

// Single-file NIfTI-1, little-endian, float32 or int16, diagonal affine.
// Voxel (i, j, k) is stored with i fastest; vector fields are 5-D with the
// component along the fifth dimension, channel stacks 4-D.
void write_volume(const ScalarVolume& vol, const std::filesystem::path& path);
void write_volume(const LabelVolume& labels, const std::filesystem::path& path);
void write_volume(const VectorField& field, const std::filesystem::path& path);
void write_channels(const std::vector<ScalarVolume>& channels, const std::filesystem::path& path);

ScalarVolume read_scalar(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);
VectorField read_field(const std::filesystem::path& path);
std::vector<ScalarVolume> read_channels(const std::filesystem::path& path);

// Dispatches on the header: int16 -> labels, 5-D with three components ->
// field, otherwise a scalar volume.
using AnyVolume = std::variant<ScalarVolume, LabelVolume, VectorField>;
AnyVolume read_volume(const std::filesystem::path& path);

using Json = nlohmann::ordered_json;

Json to_json(const GridGeometry& g);
GridGeometry geometry_from_json(const Json& j);
Json to_json(const LandmarkSet& lm);
LandmarkSet landmarks_from_json(const Json& j);
Json to_json(const LossReport& r);
Json to_json(const BSplineField& f);
BSplineField bspline_from_json(const Json& j);
// Forward stages and history; the backward stack is rebuilt on load.
Json to_json(const RegistrationResult& r);
RegistrationResult result_from_json(const Json& j);
Json to_json(const RegistrationConfig& c);
// Keys absent from `j` keep the values of `base`.
RegistrationConfig registration_config_from_json(const Json& j, RegistrationConfig base = {});
Json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const Json& j, PhantomSpec base = {});

Json read_json(const std::filesystem::path& path);
void write_json(const Json& j, const std::filesystem::path& path);

} // namespace mindreg
