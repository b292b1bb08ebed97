#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mindreg/io.hpp"

namespace fs = std::filesystem;
using namespace mindreg;

namespace {

std::vector<Eigen::Vector3i> parse_offsets(const std::string& text) {
    std::vector<Eigen::Vector3i> out;
    std::stringstream groups(text);
    std::string group;
    while (std::getline(groups, group, ';')) {
        std::stringstream parts(group);
        std::string part;
        std::vector<int> v;
        while (std::getline(parts, part, ',')) {
            try {
                size_t used = 0;
                v.push_back(std::stoi(part, &used));
                if (used != part.size()) throw std::invalid_argument(part);
            } catch (const std::exception&) {
                throw CLI::ValidationError("--offsets", "bad integer '" + part + "'");
            }
        }
        if (v.size() != 3) throw CLI::ValidationError("--offsets", "each offset needs three integers");
        out.emplace_back(v[0], v[1], v[2]);
    }
    if (out.empty()) throw CLI::ValidationError("--offsets", "no offsets given");
    return out;
}

RegistrationConfig load_config(const std::string& path) {
    return path.empty() ? RegistrationConfig{} : registration_config_from_json(read_json(path));
}

SimilaritySpace similarity_from(const std::string& name) {
    return name == "raw" ? SimilaritySpace::raw_intensity : SimilaritySpace::mind;
}

Json summary(const ScalarVolume& fixed, const ScalarVolume& moving, const RegistrationResult& r,
             const RegistrationConfig& config) {
    const VectorField fwd = r.forward_field();
    const VectorField bwd = r.backward_field();
    const LossReport final = evaluate_result(fixed, moving, r, config);
    return {{"final_loss", to_json(final)},
            {"ndv_forward", ndv_metric(fwd)},
            {"ndv_backward", ndv_metric(bwd)},
            {"inverse_consistency", inverse_consistency_residual(r.forward_stack, r.backward_stack)},
            {"converged_flags", r.converged_flags}};
}

void write_result_outputs(const RegistrationResult& r, const std::string& out_field, const std::string& out_inverse,
                          const std::string& out_result) {
    if (!out_field.empty()) write_volume(r.forward_field(), out_field);
    if (!out_inverse.empty()) write_volume(r.backward_field(), out_inverse);
    if (!out_result.empty()) write_json(to_json(r), out_result);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MIND-feature diffeomorphic registration toolkit"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(40);

    // mind
    auto* mind_cmd = app.add_subcommand("mind", "Compute MIND feature channels of an image");
    std::string mind_image, mind_out, mind_offsets;
    MindParams mind_params;
    mind_cmd->add_option("--image", mind_image, "Input scalar volume")->required();
    mind_cmd->add_option("--out", mind_out, "Output 4-D channel volume")->required();
    mind_cmd->add_option("--sigma", mind_params.sigma, "Gaussian patch width")->capture_default_str();
    mind_cmd->add_option("--patch-radius", mind_params.patch_radius, "Patch lattice half-width, 0 = ceil(3 sigma)")
        ->capture_default_str();
    mind_cmd->add_option("--offsets", mind_offsets, "Offsets as 'x,y,z;x,y,z;...'")
        ->default_str("1,0,0;-1,0,0;0,1,0;0,-1,0;0,0,1;0,0,-1");

    // register
    auto* reg_cmd = app.add_subcommand("register", "Register a moving image to a fixed image");
    std::string reg_fixed, reg_moving, reg_config, reg_field, reg_inverse, reg_result, reg_similarity = "mind";
    std::uint64_t reg_seed = 0;
    reg_cmd->add_option("--fixed", reg_fixed, "Fixed scalar volume")->required();
    reg_cmd->add_option("--moving", reg_moving, "Moving scalar volume")->required();
    reg_cmd->add_option("--config", reg_config, "Registration config JSON (keys override defaults)");
    reg_cmd->add_option("--out-field", reg_field, "Forward displacement field (fixed to moving)");
    reg_cmd->add_option("--out-inverse", reg_inverse, "Backward displacement field");
    reg_cmd->add_option("--out-result", reg_result, "Stage coefficients and loss history JSON");
    reg_cmd->add_option("--similarity", reg_similarity, "Similarity space")
        ->check(CLI::IsMember({"mind", "raw"}))
        ->capture_default_str();
    reg_cmd->add_option("--seed", reg_seed, "Seed for the initial coefficients")->capture_default_str();

    // warp
    auto* warp_cmd = app.add_subcommand("warp", "Resample a volume through a displacement field");
    std::string warp_image, warp_field, warp_out, warp_interp = "linear";
    warp_cmd->add_option("--image", warp_image, "Scalar or label volume")->required();
    warp_cmd->add_option("--field", warp_field, "Displacement field")->required();
    warp_cmd->add_option("--interp", warp_interp, "Interpolation; nearest expects int16 labels")
        ->check(CLI::IsMember({"linear", "nearest"}))
        ->capture_default_str();
    warp_cmd->add_option("--out", warp_out, "Output volume")->required();

    // invert
    auto* inv_cmd = app.add_subcommand("invert", "Invert a displacement field by fixed-point iteration");
    std::string inv_field, inv_out;
    InversionOptions inv_options;
    inv_cmd->add_option("--field", inv_field, "Displacement field")->required();
    inv_cmd->add_option("--out", inv_out, "Inverse displacement field")->required();
    inv_cmd->add_option("--tol", inv_options.tol, "Stop when the max update falls below this")
        ->capture_default_str();
    inv_cmd->add_option("--max-iter", inv_options.max_iter, "Iteration limit")->capture_default_str();

    // compose
    auto* comp_cmd = app.add_subcommand("compose", "Compose two displacement fields, first then second");
    std::string comp_first, comp_second, comp_out;
    comp_cmd->add_option("--first", comp_first, "Field applied first")->required();
    comp_cmd->add_option("--second", comp_second, "Field applied second")->required();
    comp_cmd->add_option("--out", comp_out, "Composed field")->required();

    // metrics
    auto* met_cmd = app.add_subcommand("metrics", "Dice, HD95, TRE and NDV of a registration");
    std::string met_la, met_lb, met_field, met_lma, met_lmb, met_out;
    met_cmd->add_option("--labels-a", met_la, "Fixed label volume");
    met_cmd->add_option("--labels-b", met_lb, "Moving label volume, warped by --field before comparison");
    met_cmd->add_option("--field", met_field, "Forward displacement field (zero if omitted)");
    met_cmd->add_option("--landmarks-a", met_lma, "Fixed landmarks JSON");
    met_cmd->add_option("--landmarks-b", met_lmb, "Moving landmarks JSON");
    met_cmd->add_option("--out", met_out, "Write the report here instead of stdout");

    // synth
    auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark case");
    std::string syn_spec, syn_dir;
    std::uint64_t syn_seed = 0;
    syn_cmd->add_option("--spec", syn_spec, "Phantom spec JSON (keys override defaults)");
    syn_cmd->add_option("--out-dir", syn_dir, "Output directory")->required();
    auto* syn_seed_opt = syn_cmd->add_option("--seed", syn_seed, "Overrides the spec seed");

    // ensemble
    auto* ens_cmd = app.add_subcommand("ensemble", "Run or average an ensemble of registrations");
    std::string ens_fixed, ens_moving, ens_config, ens_out, ens_field, ens_inverse, ens_similarity = "mind";
    std::vector<std::string> ens_average;
    EnsembleConfig ens_params;
    ens_cmd->add_option("--fixed", ens_fixed, "Fixed scalar volume");
    ens_cmd->add_option("--moving", ens_moving, "Moving scalar volume");
    ens_cmd->add_option("--config", ens_config, "Registration config JSON");
    ens_cmd->add_option("--members", ens_params.members, "Ensemble size")->capture_default_str();
    ens_cmd->add_option("--seed", ens_params.seed_base, "Seed of member 0; member i uses seed + i")
        ->capture_default_str();
    ens_cmd->add_option("--perturbation", ens_params.perturbation_scale,
                        "Initial coefficient spread as a fraction of the bound")
        ->capture_default_str();
    ens_cmd->add_option("--similarity", ens_similarity, "Similarity space")
        ->check(CLI::IsMember({"mind", "raw"}))
        ->capture_default_str();
    ens_cmd->add_option("--average", ens_average, "Average these result JSON files instead of registering");
    ens_cmd->add_option("--out", ens_out, "Averaged result JSON")->required();
    ens_cmd->add_option("--out-field", ens_field, "Averaged forward displacement field");
    ens_cmd->add_option("--out-inverse", ens_inverse, "Averaged backward displacement field");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*mind_cmd) {
            if (!mind_offsets.empty()) mind_params.offsets = parse_offsets(mind_offsets);
            mind_params.validate();
            const MindVolume m = mind_transform(read_scalar(mind_image), mind_params);
            write_channels(m.channels, mind_out);
        } else if (*reg_cmd) {
            RegistrationConfig config = load_config(reg_config);
            config.similarity_space = similarity_from(reg_similarity);
            config.seed = reg_seed;
            const ScalarVolume fixed = read_scalar(reg_fixed), moving = read_scalar(reg_moving);
            const RegistrationResult r = register_pair(fixed, moving, config);
            write_result_outputs(r, reg_field, reg_inverse, reg_result);
            std::cout << summary(fixed, moving, r, config).dump(2) << '\n';
        } else if (*warp_cmd) {
            const VectorField u = read_field(warp_field);
            if (warp_interp == "nearest") write_volume(apply_warp_nearest(read_labels(warp_image), u), warp_out);
            else write_volume(apply_warp(read_scalar(warp_image), u), warp_out);
        } else if (*inv_cmd) {
            write_volume(invert_fixed_point(read_field(inv_field), inv_options), inv_out);
        } else if (*comp_cmd) {
            write_volume(compose(read_field(comp_first), read_field(comp_second)), comp_out);
        } else if (*met_cmd) {
            if (met_la.empty() != met_lb.empty()) throw CLI::ValidationError("--labels-a and --labels-b go together");
            if (met_lma.empty() != met_lmb.empty())
                throw CLI::ValidationError("--landmarks-a and --landmarks-b go together");
            if (met_la.empty() && met_lma.empty() && met_field.empty())
                throw CLI::ValidationError("nothing to measure");
            Json report = Json::object();
            std::optional<VectorField> u;
            if (!met_field.empty()) u = read_field(met_field);
            if (!met_la.empty()) {
                const LabelVolume a = read_labels(met_la);
                LabelVolume b = read_labels(met_lb);
                require_same_geometry(a.geometry, b.geometry, "metrics");
                if (u) b = apply_warp_nearest(b, *u);
                const DiceResult d = dice(a, b);
                Json per_dice = Json::object(), per_hd = Json::object();
                double hd_sum = 0.0;
                for (const auto& [label, value] : d.per_label) {
                    per_dice[std::to_string(label)] = value;
                    const double h = hd95(a, b, label);
                    per_hd[std::to_string(label)] = h;
                    hd_sum += h;
                }
                report["dice"] = {{"mean", d.mean}, {"per_label", per_dice}};
                report["hd95"] = {{"mean", d.per_label.empty() ? 0.0 : hd_sum / double(d.per_label.size())},
                                  {"per_label", per_hd}};
            }
            if (!met_lma.empty()) {
                const LandmarkSet a = landmarks_from_json(read_json(met_lma));
                const LandmarkSet b = landmarks_from_json(read_json(met_lmb));
                GridGeometry g;
                if (u) g = u->geometry;
                else if (!met_la.empty()) g = read_labels(met_la).geometry;
                else throw CLI::ValidationError("landmarks need --field or --labels-a for the grid");
                const VectorField zero(g);
                const TreResult t = tre(a, b, u ? *u : zero, g.spacing);
                Json ids = Json::object();
                for (size_t i = 0; i < t.per_landmark.size(); ++i) ids[a.identifiers[i]] = t.per_landmark[i];
                report["tre"] = {{"mean", t.mean}, {"per_landmark", ids}};
            }
            if (u) report["ndv"] = ndv_metric(*u);
            if (met_out.empty()) std::cout << report.dump(2) << '\n';
            else write_json(report, met_out);
        } else if (*syn_cmd) {
            PhantomSpec spec = syn_spec.empty() ? PhantomSpec{} : phantom_spec_from_json(read_json(syn_spec));
            if (*syn_seed_opt) spec.seed = syn_seed;
            const BenchCase c = make_case(spec);
            const fs::path dir(syn_dir);
            fs::create_directories(dir);
            write_volume(c.fixed, dir / "fixed.nii");
            write_volume(c.moving, dir / "moving.nii");
            write_volume(c.labels_fixed, dir / "labels_fixed.nii");
            write_volume(c.labels_moving, dir / "labels_moving.nii");
            write_volume(c.gt_field, dir / "gt_field.nii");
            write_volume(stack_to_dense(inverse_of(StageStack{{c.gt}})), dir / "gt_forward.nii");
            write_json(to_json(c.gt), dir / "gt.json");
            write_json(to_json(c.landmarks_fixed), dir / "landmarks_fixed.json");
            write_json(to_json(c.landmarks_moving), dir / "landmarks_moving.json");
            const Json manifest = {{"spec", to_json(spec)},
                                   {"seed", spec.seed},
                                   {"files",
                                    {{"fixed", "fixed.nii"},
                                     {"moving", "moving.nii"},
                                     {"labels_fixed", "labels_fixed.nii"},
                                     {"labels_moving", "labels_moving.nii"},
                                     {"gt_field", "gt_field.nii"},
                                     {"gt_forward", "gt_forward.nii"},
                                     {"gt", "gt.json"},
                                     {"landmarks_fixed", "landmarks_fixed.json"},
                                     {"landmarks_moving", "landmarks_moving.json"}}},
                                   {"landmarks_fixed", to_json(c.landmarks_fixed)["landmarks"]},
                                   {"landmarks_moving", to_json(c.landmarks_moving)["landmarks"]}};
            write_json(manifest, dir / "case.json");
        } else if (*ens_cmd) {
            RegistrationConfig config = load_config(ens_config);
            config.similarity_space = similarity_from(ens_similarity);
            const bool have_images = !ens_fixed.empty() && !ens_moving.empty();
            if (ens_fixed.empty() != ens_moving.empty())
                throw CLI::ValidationError("--fixed and --moving go together");
            RegistrationResult avg;
            if (!ens_average.empty()) {
                std::vector<RegistrationResult> results;
                for (const auto& p : ens_average) results.push_back(result_from_json(read_json(p)));
                avg = have_images ? ensemble_average(results, read_scalar(ens_fixed), read_scalar(ens_moving), config)
                                  : ensemble_average(results);
            } else {
                if (!have_images) throw CLI::ValidationError("ensemble needs --fixed and --moving, or --average");
                const ScalarVolume fixed = read_scalar(ens_fixed), moving = read_scalar(ens_moving);
                avg = ensemble_average(run_ensemble(fixed, moving, config, ens_params), fixed, moving, config);
                std::cout << summary(fixed, moving, avg, config).dump(2) << '\n';
            }
            write_result_outputs(avg, ens_field, ens_inverse, ens_out);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
