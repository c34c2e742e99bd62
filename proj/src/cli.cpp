#include "mmreg/cli.h"

#include "mmreg/eval.h"
#include "mmreg/mha_io.h"
#include "mmreg/mind.h"
#include "mmreg/parallel.h"
#include "mmreg/phantom.h"
#include "mmreg/registration.h"
#include "mmreg/rigid.h"
#include "mmreg/stitch.h"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <thread>

namespace mmreg {

namespace {

// Bad option values detected after parsing; reported like parse errors.
class UsageError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

Dims parse_dims(const std::string& text, const std::string& flag)
{
    static const std::regex re(R"((\d+)x(\d+)x(\d+))");
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw UsageError(flag + " expects AxBxC, got '" + text + "'");
    return {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
}

void parse_scale(const std::string& text, CombineParams& combine)
{
    if (text == "grad") {
        combine.strategy = ScaleStrategy::initial_gradient;
    }
    else if (text == "delta") {
        combine.strategy = ScaleStrategy::dissimilarity_change;
    }
    else if (text.rfind("fixed:", 0) == 0) {
        combine.strategy = ScaleStrategy::fixed;
        try {
            std::size_t used = 0;
            combine.fixed_s = std::stod(text.substr(6), &used);
            if (used != text.size() - 6) throw std::invalid_argument("trailing characters");
        }
        catch (const std::exception&) {
            throw UsageError("--scale fixed:<v> needs a number, got '" + text + "'");
        }
    }
    else {
        throw UsageError("--scale must be fixed:<v>, grad or delta, got '" + text + "'");
    }
}

void save_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << text;
}

struct Globals
{
    int threads = 0;
    std::uint64_t seed = 0x5EED;
    std::string manifest;
};

// Options shared by register and gridsearch.
struct RegisterFlags
{
    std::string fixed, moving;
    std::string measure = "nmi";
    double beta = 0.8;
    std::string scale = "grad";
    double lambda = 1e-5;
    std::string regularizer = "tv";
    int spacing = 4;
    int levels = 3;
    int max_iters = 100;
    double step_tol = 1e-5;
    bool symmetric = false;
    int every_n = 0;
    int bins = 100;
    int lncc_radius = 3;
    double mind_sigma = 0.5;
    int gradient_smoothing = 1;
    double isotropic = 0.0;
    bool rescale = false;
    bool rigid_init = false;

    void add(CLI::App* app, bool with_grid_params)
    {
        app->add_option("--fixed", fixed, "fixed image (.mha)")->required();
        app->add_option("--moving", moving, "moving image (.mha)")->required();
        app->add_option("--measure", measure, "nmi | mind | nmi+mind | lncc");
        app->add_option("--beta", beta, "NMI weight in nmi+mind");
        app->add_option("--scale", scale, "MIND scale s: fixed:<v> | grad | delta");
        if (with_grid_params) {
            app->add_option("--lambda", lambda, "regularization weight");
            app->add_option("--spacing", spacing, "control point spacing (voxels)");
            app->add_option("--levels", levels, "pyramid levels");
        }
        app->add_option("--regularizer", regularizer, "tv | l2");
        app->add_option("--max-iters", max_iters, "iteration cap per level");
        app->add_option("--step-tol", step_tol, "relative cost change that ends a level");
        app->add_flag("--symmetric", symmetric, "optimise forward and backward fields with inverse-consistency averaging");
        app->add_option("--every-n", every_n, "averaging period in symmetric mode (0: end of level only)");
        app->add_option("--bins", bins, "NMI histogram bins");
        app->add_option("--lncc-radius", lncc_radius, "LNCC window radius (voxels)");
        app->add_option("--mind-sigma", mind_sigma, "MIND patch Gaussian sigma (voxels)");
        app->add_option("--gradient-smoothing", gradient_smoothing, "binomial passes on the node gradient");
        app->add_option("--isotropic", isotropic, "resample both images to this spacing in mm (0: off)");
        app->add_flag("--rescale", rescale, "rescale both images to [0, 255]");
        app->add_flag("--rigid-init", rigid_init, "rigid pre-alignment before deformable registration");
    }

    RegistrationConfig config() const
    {
        RegistrationConfig c;
        try {
            c.measure = parse_measure(measure);
            c.regularizer = parse_regularizer(regularizer);
        }
        catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        c.combine.beta = beta;
        parse_scale(scale, c.combine);
        c.lambda = lambda;
        c.spacing_vox = spacing;
        c.levels = levels;
        c.max_iters_per_level = max_iters;
        c.step_tol = step_tol;
        c.symmetric = symmetric;
        c.every_n_iterations = every_n;
        c.bins = bins;
        c.lncc_radius = lncc_radius;
        c.mind.sigma = mind_sigma;
        c.gradient_smoothing = gradient_smoothing;
        try {
            c.validate();
        }
        catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return c;
    }

    std::pair<Volume, Volume> load() const
    {
        Volume f = load_mha_volume(fixed);
        Volume m = load_mha_volume(moving);
        if (isotropic > 0.0) {
            f = resample_isotropic(f, isotropic);
            m = resample_isotropic(m, isotropic);
        }
        if (rescale) {
            f = rescale_intensity(f, 0.0, 255.0);
            m = rescale_intensity(m, 0.0, 255.0);
        }
        if (f.dims != m.dims) {
            throw std::runtime_error("fixed " + to_string(f.dims) + " and moving " + to_string(m.dims)
                                     + " differ in dims; resample them onto one grid first");
        }
        return {std::move(f), std::move(m)};
    }
};

void print_rigid(std::ostream& out, const RigidResult& r, const std::string& prefix)
{
    const auto old = out.precision(17);
    out << prefix << "rotation_rad=" << r.transform.rotation_rad[0] << ',' << r.transform.rotation_rad[1] << ','
        << r.transform.rotation_rad[2] << '\n'
        << prefix << "translation_mm=" << r.transform.translation_mm[0] << ',' << r.transform.translation_mm[1] << ','
        << r.transform.translation_mm[2] << '\n'
        << prefix << "cost=" << r.cost << '\n'
        << prefix << "evaluations=" << r.evaluations << '\n'
        << prefix << "accepted=" << r.accepted << '\n';
    out.precision(old);
}

std::string quote(const std::string& v) { return '"' + v + '"'; }

// One key=value line per configurable option: the parsed value if given,
// else the default. Readable back through --config.
void write_options(std::ostream& os, const CLI::App& app)
{
    for (const CLI::Option* o : app.get_options()) {
        if (!o->get_configurable() || o->get_lnames().empty()) continue;
        const std::string key = o->get_lnames().front();
        if (key == "help" || key == "version" || key == "config") continue;
        std::string value;
        if (o->get_items_expected_max() == 0) {
            value = o->count() > 0 ? "true" : "false";
        }
        else if (o->count() > 0) {
            const auto& r = o->results();
            if (o->get_items_expected_max() > 1) {
                value = "[";
                for (std::size_t i = 0; i < r.size(); ++i) value += (i ? "," : "") + quote(r[i]);
                value += "]";
            }
            else {
                value = quote(r.back());
            }
        }
        else {
            value = o->get_default_str();
            if (o->get_items_expected_max() > 1) {
                if (value.empty()) value = "[]";
            }
            else {
                value = quote(value);
            }
        }
        os << key << '=' << value << '\n';
    }
}

} // namespace

int cli_main(int argc, char** argv) { return cli_main(argc, argv, std::cout, std::cerr); }

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multi-modal deformable image registration (NMI, MIND, NMI+MIND, LNCC)", "mmreg"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", tool_version);
    app.set_config("--config", "", "re-run a manifest written by --manifest");

    Globals g;
    app.add_option("--threads", g.threads, "worker threads (0: all cores); results do not depend on it");
    app.add_option("--seed", g.seed, "seed for every random choice (rigid ES, phantoms)");
    app.add_option("--manifest", g.manifest, "write the run manifest here (default: stderr)")->configurable(false);

    // register
    RegisterFlags reg;
    std::string out_field, out_warped, out_backward, report;
    auto* c_register = app.add_subcommand("register", "deformable registration of moving onto fixed");
    reg.add(c_register, true);
    c_register->add_option("--out-field", out_field, "displacement field (3-channel .mha, voxels)");
    c_register->add_option("--out-warped", out_warped, "warped moving image (.mha)");
    c_register->add_option("--out-backward", out_backward, "backward field in symmetric mode (.mha)");
    c_register->add_option("--report", report, "key=value run report (default: stdout)");

    // rigid
    std::string r_fixed, r_moving, r_out, r_report;
    RigidOptions rigid_opts;
    auto* c_rigid = app.add_subcommand("rigid", "rigid (1+1)-ES registration under NMI");
    c_rigid->add_option("--fixed", r_fixed, "fixed image (.mha)")->required();
    c_rigid->add_option("--moving", r_moving, "moving image (.mha)")->required();
    c_rigid->add_option("--iterations", rigid_opts.iterations, "total ES iterations");
    c_rigid->add_option("--levels", rigid_opts.levels, "pyramid levels");
    c_rigid->add_option("--radius", rigid_opts.initial_radius_mm, "initial mutation radius (mm)");
    c_rigid->add_option("--bins", rigid_opts.bins, "NMI histogram bins");
    c_rigid->add_option("--out-warped", r_out, "resampled moving image (.mha)");
    c_rigid->add_option("--report", r_report, "key=value transform report (default: stdout)");

    // warp
    std::string w_moving, w_field, w_out;
    bool w_nearest = false;
    auto* c_warp = app.add_subcommand("warp", "apply a displacement field");
    c_warp->add_option("--moving", w_moving, "image or label map (.mha)")->required();
    c_warp->add_option("--field", w_field, "displacement field (.mha)")->required();
    c_warp->add_option("--out", w_out, "output (.mha)")->required();
    c_warp->add_flag("--nearest", w_nearest, "nearest-neighbour sampling (integer inputs stay label maps)");

    // dice
    std::string d_a, d_b, d_csv;
    auto* c_dice = app.add_subcommand("dice", "per-label Dice overlap");
    c_dice->add_option("--a", d_a, "label map (.mha)")->required();
    c_dice->add_option("--b", d_b, "label map (.mha)")->required();
    c_dice->add_option("--csv", d_csv, "also write label,name,dice CSV");

    // volumes
    std::vector<std::string> v_a, v_b;
    auto* c_volumes = app.add_subcommand("volumes", "mean label volumes (cm^3) of two groups and their ratio");
    c_volumes->add_option("--group-a", v_a, "label maps of group A")->required();
    c_volumes->add_option("--group-b", v_b, "label maps of group B")->required();

    // mind
    std::string m_in, m_out;
    double m_sigma = 0.5;
    auto* c_mind = app.add_subcommand("mind", "dump MIND descriptors (6-channel .mha)");
    c_mind->add_option("--input", m_in, "image (.mha)")->required();
    c_mind->add_option("--out", m_out, "descriptor image (.mha)")->required();
    c_mind->add_option("--sigma", m_sigma, "patch Gaussian sigma (voxels)");

    // similarity
    std::string s_fixed, s_moving, s_field, s_measure = "nmi";
    double s_beta = 0.8, s_s = 1.0;
    int s_bins = 100, s_radius = 3;
    auto* c_sim = app.add_subcommand("similarity", "one-shot dissimilarity value");
    c_sim->add_option("--fixed", s_fixed, "fixed image (.mha)")->required();
    c_sim->add_option("--moving", s_moving, "moving image (.mha)")->required();
    c_sim->add_option("--field", s_field, "optional displacement applied to moving (.mha)");
    c_sim->add_option("--measure", s_measure, "nmi | mind | nmi+mind | lncc");
    c_sim->add_option("--beta", s_beta, "NMI weight in nmi+mind");
    c_sim->add_option("--s", s_s, "MIND scale in nmi+mind");
    c_sim->add_option("--bins", s_bins, "NMI histogram bins");
    c_sim->add_option("--lncc-radius", s_radius, "LNCC window radius (voxels)");

    // stitch
    std::string t_in, t_out, t_tile = "16x16x12", t_stride = "4x4x4", t_mapper = "identity";
    auto* c_stitch = app.add_subcommand("stitch", "map a volume tile by tile and average the overlaps");
    c_stitch->add_option("--input", t_in, "image (.mha)")->required();
    c_stitch->add_option("--out", t_out, "stitched output (.mha)")->required();
    c_stitch->add_option("--tile", t_tile, "tile size WxWxC");
    c_stitch->add_option("--stride", t_stride, "tile stride SxSxSc");
    c_stitch->add_option("--mapper", t_mapper, "identity | affine:a,b | lut:<file>");

    // phantom
    std::string p_spec, p_dir = ".";
    auto* c_phantom = app.add_subcommand("phantom", "synthetic image pair with known deformation");
    c_phantom->add_option("--spec", p_spec,
                          "e.g. \"dims=64x64x64 blobs=48 deformation=sinusoidal(3,32) remap=inverted_bands(4)\"");
    c_phantom->add_option("--out-dir", p_dir, "output directory");

    // gridsearch
    RegisterFlags gs;
    std::vector<double> g_lambdas{0.0125, 0.025, 0.05, 0.1, 0.2};
    std::vector<int> g_spacings{8, 10, 12, 14, 16};
    std::vector<int> g_levels{2, 3, 4};
    std::string g_score = "dissim", g_out;
    auto* c_grid = app.add_subcommand("gridsearch", "rank every (lambda, spacing, levels) combination");
    gs.add(c_grid, false);
    c_grid->add_option("--lambdas", g_lambdas, "regularization weights")->delimiter(',');
    c_grid->add_option("--spacings", g_spacings, "control point spacings (voxels)")->delimiter(',');
    c_grid->add_option("--levels", g_levels, "pyramid level counts")->delimiter(',');
    c_grid->add_option("--score", g_score, "dissim | dice:<fixed_labels>,<moving_labels>");
    c_grid->add_option("--out", g_out, "CSV output (default: stdout)");

    for (auto* sub : app.get_subcommands({})) sub->configurable();

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    const auto t0 = std::chrono::steady_clock::now();
    set_num_threads(g.threads > 0 ? g.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    try {
        if (sub == c_register) {
            RegistrationConfig cfg = reg.config();
            auto [fixed, moving] = reg.load();
            std::optional<RigidResult> rigid;
            if (reg.rigid_init) {
                RigidOptions ro;
                ro.seed = g.seed;
                rigid = register_rigid(fixed, moving, ro);
                moving = rigid->resampled;
            }
            const RegistrationResult r = register_deformable(fixed, moving, cfg);
            std::ostringstream rep;
            write_report(rep, r);
            if (rigid) print_rigid(rep, *rigid, "rigid.");
            if (report.empty()) out << rep.str();
            else save_text(report, rep.str());
            const DenseField field = r.field();
            if (!out_field.empty()) save_mha(field, out_field, fixed.spacing, fixed.origin);
            if (!out_warped.empty()) save_mha(warp(moving, field), out_warped);
            if (!out_backward.empty()) {
                if (!r.backward) throw UsageError("--out-backward requires --symmetric");
                save_mha(*r.backward_field(), out_backward, fixed.spacing, fixed.origin);
            }
        }
        else if (sub == c_rigid) {
            rigid_opts.seed = g.seed;
            const Volume fixed = load_mha_volume(r_fixed);
            const Volume moving = load_mha_volume(r_moving);
            const RigidResult r = register_rigid(fixed, moving, rigid_opts);
            std::ostringstream rep;
            print_rigid(rep, r, "");
            if (r_report.empty()) out << rep.str();
            else save_text(r_report, rep.str());
            if (!r_out.empty()) save_mha(r.resampled, r_out);
        }
        else if (sub == c_warp) {
            const DenseField field = load_mha_field(w_field);
            const MhaImage header = read_mha(w_moving);
            if (w_nearest && header.element_type != ElementType::float32) {
                const LabelVolume labels = load_mha_labels(w_moving);
                if (labels.dims != field.dims) throw std::runtime_error("field and labels differ in dims");
                save_mha(propagate_labels(labels, field), w_out);
            }
            else {
                const Volume v = load_mha_volume(w_moving);
                if (v.dims != field.dims) throw std::runtime_error("field and image differ in dims");
                save_mha(warp(v, field, w_nearest ? Interp::nearest : Interp::trilinear), w_out);
            }
        }
        else if (sub == c_dice) {
            const DiceReport rep = dice(load_mha_labels(d_a), load_mha_labels(d_b));
            print_dice_table(out, rep);
            if (!d_csv.empty()) {
                std::ostringstream csv;
                write_dice_csv(csv, rep);
                save_text(d_csv, csv.str());
            }
        }
        else if (sub == c_volumes) {
            std::vector<LabelVolume> a, b;
            for (const auto& p : v_a) a.push_back(load_mha_labels(p));
            for (const auto& p : v_b) b.push_back(load_mha_labels(p));
            print_volume_stats(out, volume_stats(a, b));
        }
        else if (sub == c_mind) {
            MindParams mp;
            mp.sigma = m_sigma;
            save_mha(compute_mind(load_mha_volume(m_in), mp), m_out);
        }
        else if (sub == c_sim) {
            const Volume fixed = load_mha_volume(s_fixed);
            const Volume moving = load_mha_volume(s_moving);
            if (fixed.dims != moving.dims) throw std::runtime_error("fixed and moving differ in dims");
            const DenseField field = s_field.empty() ? DenseField(fixed.dims) : load_mha_field(s_field);
            Measure measure;
            try {
                measure = parse_measure(s_measure);
            }
            catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            double value = 0.0;
            switch (measure) {
            case Measure::nmi: value = nmi_dissimilarity(fixed, warp(moving, field), s_bins); break;
            case Measure::mind: value = mind_dissimilarity(fixed, moving, field); break;
            case Measure::lncc: value = lncc_dissimilarity(fixed, warp(moving, field), s_radius); break;
            case Measure::nmi_mind: {
                value = combined_dissimilarity(fixed, moving, field, s_beta, s_s);
                break;
            }
            }
            const auto old = out.precision(17);
            out << "measure=" << to_string(measure) << "\nvalue=" << value << '\n';
            out.precision(old);
        }
        else if (sub == c_stitch) {
            const Dims tile = parse_dims(t_tile, "--tile"), stride = parse_dims(t_stride, "--stride");
            const Volume v = load_mha_volume(t_in);
            const TilePlan plan = plan_tiles(v.dims, tile, stride);
            TileMapper mapper;
            if (t_mapper == "identity") {
                mapper = identity_mapper();
            }
            else if (t_mapper.rfind("affine:", 0) == 0) {
                static const std::regex re(R"(affine:([^,]+),([^,]+))");
                std::smatch m;
                if (!std::regex_match(t_mapper, m, re)) throw UsageError("--mapper affine:a,b expected");
                try {
                    mapper = affine_mapper(std::stod(m[1]), std::stod(m[2]));
                }
                catch (const std::logic_error&) {
                    throw UsageError("--mapper affine:a,b needs numbers, got '" + t_mapper + "'");
                }
            }
            else if (t_mapper.rfind("lut:", 0) == 0) {
                mapper = lut_mapper(load_lut(t_mapper.substr(4)));
            }
            else {
                throw UsageError("--mapper must be identity, affine:a,b or lut:<file>, got '" + t_mapper + "'");
            }
            save_mha(stitch_map(v, plan, mapper), t_out);
            out << "tiles=" << plan.origins.size() << '\n';
        }
        else if (sub == c_phantom) {
            PhantomSpec base;
            base.seed = g.seed;
            PhantomSpec spec;
            try {
                spec = parse_phantom_spec(p_spec, base);
            }
            catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            const Phantom p = generate(spec);
            std::filesystem::create_directories(p_dir);
            const std::filesystem::path dir(p_dir);
            save_mha(p.a, (dir / "volume_a.mha").string());
            save_mha(p.b, (dir / "volume_b.mha").string());
            save_mha(p.labels_a, (dir / "labels_a.mha").string());
            save_mha(p.labels_b, (dir / "labels_b.mha").string());
            save_mha(p.truth, (dir / "truth_field.mha").string());
            save_text((dir / "spec.txt").string(), to_string(spec) + "\n");
            out << to_string(spec) << '\n';
        }
        else if (sub == c_grid) {
            const RegistrationConfig base = gs.config();
            auto [fixed, moving] = gs.load();
            ScoreFn score;
            bool higher = false;
            if (g_score.rfind("dice:", 0) == 0) {
                const auto comma = g_score.find(',', 5);
                if (comma == std::string::npos) throw UsageError("--score dice:<fixed_labels>,<moving_labels> expected");
                auto fixed_labels = std::make_shared<LabelVolume>(load_mha_labels(g_score.substr(5, comma - 5)));
                auto moving_labels = std::make_shared<LabelVolume>(load_mha_labels(g_score.substr(comma + 1)));
                score = [fixed_labels, moving_labels](const RegistrationResult& r) {
                    return dice(*fixed_labels, propagate_labels(*moving_labels, r.field())).mean;
                };
                higher = true;
            }
            else if (g_score != "dissim") {
                throw UsageError("--score must be dissim or dice:<fixed_labels>,<moving_labels>");
            }
            const auto cells = grid_search(fixed, moving, base, g_lambdas, g_spacings, g_levels, score, higher);
            std::ostringstream csv;
            write_grid_search_csv(csv, cells);
            if (g_out.empty()) out << csv.str();
            else save_text(g_out, csv.str());
        }
    }
    catch (const UsageError& e) {
        err << name << ": " << e.what() << '\n';
        return 1;
    }
    catch (const std::exception& e) {
        err << name << ": error: " << e.what() << '\n';
        return 2;
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream manifest;
    manifest << "# mmreg run manifest; reproduce with: mmreg --config <this file>\n"
             << "# tool_version=" << tool_version << "\n# subcommand=" << name << "\n# wall_seconds=" << wall << '\n'
             << "# seed=" << g.seed << '\n';
    write_options(manifest, app);
    manifest << '[' << name << "]\n";
    write_options(manifest, *sub);
    try {
        if (g.manifest.empty()) err << manifest.str();
        else save_text(g.manifest, manifest.str());
    }
    catch (const std::exception& e) {
        err << name << ": error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

} // namespace mmreg
