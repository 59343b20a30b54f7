#include "latune/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "latune/design.hpp"
#include "latune/errors.hpp"

namespace latune {

using nlohmann::json;

namespace {

std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "sigmoid"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") {
        return Activation::ReLU;
    }
    if (s == "sigmoid") {
        return Activation::Sigmoid;
    }
    throw InvalidConfig("unknown activation '" + s + "'");
}

void apply_activation(Eigen::MatrixXd& z, Activation a) {
    if (a == Activation::ReLU) {
        z = z.cwiseMax(0.0);
    } else {
        z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    }
}

struct LatentStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd sigma;  // floored
    Eigen::Array<bool, Eigen::Dynamic, 1> floored;
    double kl = 0.0;
};

// `codes` holds one latent code per column.
LatentStats latent_stats(const Eigen::MatrixXd& codes) {
    LatentStats s;
    const auto b = static_cast<double>(codes.cols());
    s.mean = codes.rowwise().mean();
    const Eigen::VectorXd var = (codes.colwise() - s.mean).array().square().rowwise().sum() / b;
    const Eigen::VectorXd raw_sigma = var.cwiseSqrt();
    s.floored = raw_sigma.array() < VaeModel::kSigmaFloor;
    s.sigma = raw_sigma.cwiseMax(VaeModel::kSigmaFloor);
    const Eigen::ArrayXd s2 = s.sigma.array().square();
    s.kl = 0.5 * (s.mean.array().square() + s2 - 1.0 - s2.log()).sum();
    return s;
}

void require_batch(const Eigen::MatrixXd& batch, std::size_t d_high) {
    if (batch.rows() < 2) {
        throw BatchTooSmall("loss needs a batch of at least 2 samples");
    }
    if (static_cast<std::size_t>(batch.cols()) != d_high) {
        throw DimensionMismatch(d_high, static_cast<std::size_t>(batch.cols()));
    }
}

}  // namespace

VaeArchitecture VaeArchitecture::standard(std::size_t d_high, std::size_t d_low) {
    const std::size_t half = std::max<std::size_t>(1, d_high / 2);
    const std::size_t quarter = std::max<std::size_t>(1, d_high / 4);
    VaeArchitecture a;
    a.d_high = d_high;
    a.d_low = d_low;
    a.encoder = {{half, Activation::ReLU}, {quarter, Activation::ReLU}, {d_low, Activation::Sigmoid}};
    a.decoder = {{quarter, Activation::ReLU}, {half, Activation::ReLU}, {d_high, Activation::Sigmoid}};
    return a;
}

void VaeArchitecture::validate() const {
    if (d_high < 1 || d_low < 1) {
        throw InvalidConfig("VAE dimensions must be positive");
    }
    if (encoder.empty() || decoder.empty()) {
        throw InvalidConfig("VAE needs at least one encoder and one decoder layer");
    }
    if (encoder.back().size != d_low) {
        throw DimensionMismatch(d_low, encoder.back().size);
    }
    if (decoder.back().size != d_high) {
        throw DimensionMismatch(d_high, decoder.back().size);
    }
    for (const auto& l : encoder) {
        if (l.size < 1) {
            throw InvalidConfig("VAE layers need at least one unit");
        }
    }
    for (const auto& l : decoder) {
        if (l.size < 1) {
            throw InvalidConfig("VAE layers need at least one unit");
        }
    }
}

VaeModel::VaeModel(const VaeArchitecture& arch, double kl_weight, std::uint64_t seed)
    : d_high_(arch.d_high), d_low_(arch.d_low), kl_weight_(kl_weight),
      encoder_layers_(arch.encoder.size()) {
    arch.validate();
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::size_t fan_in = d_high_;
    auto add = [&](const LayerSpec& spec) {
        MlpLayer layer;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + spec.size));
        layer.weights.resize(static_cast<Eigen::Index>(spec.size), static_cast<Eigen::Index>(fan_in));
        for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) {
                layer.weights(i, j) = limit * unif(rng);
            }
        }
        layer.biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.size));
        layer.activation = spec.activation;
        layers_.push_back(std::move(layer));
        fan_in = spec.size;
    };
    for (const auto& s : arch.encoder) {
        add(s);
    }
    for (const auto& s : arch.decoder) {
        add(s);
    }
}

std::size_t VaeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
    }
    return n;
}

Eigen::MatrixXd VaeModel::run(const Eigen::MatrixXd& input_cols, std::size_t first,
                              std::size_t last) const {
    Eigen::MatrixXd a = input_cols;
    for (std::size_t k = first; k < last; ++k) {
        const auto& layer = layers_[k];
        Eigen::MatrixXd z = layer.weights * a;
        z.colwise() += layer.biases;
        apply_activation(z, layer.activation);
        a = std::move(z);
    }
    return a;
}

Eigen::VectorXd VaeModel::encode(const Eigen::VectorXd& theta) const {
    if (static_cast<std::size_t>(theta.size()) != d_high_) {
        throw DimensionMismatch(d_high_, static_cast<std::size_t>(theta.size()));
    }
    return run(theta, 0, encoder_layers_);
}

Eigen::VectorXd VaeModel::decode(const Eigen::VectorXd& z) const {
    if (static_cast<std::size_t>(z.size()) != d_low_) {
        throw DimensionMismatch(d_low_, static_cast<std::size_t>(z.size()));
    }
    return run(z, encoder_layers_, layers_.size());
}

Eigen::MatrixXd VaeModel::encode_batch(const Eigen::MatrixXd& thetas) const {
    if (static_cast<std::size_t>(thetas.cols()) != d_high_) {
        throw DimensionMismatch(d_high_, static_cast<std::size_t>(thetas.cols()));
    }
    return run(thetas.transpose(), 0, encoder_layers_).transpose();
}

Eigen::MatrixXd VaeModel::decode_batch(const Eigen::MatrixXd& zs) const {
    if (static_cast<std::size_t>(zs.cols()) != d_low_) {
        throw DimensionMismatch(d_low_, static_cast<std::size_t>(zs.cols()));
    }
    return run(zs.transpose(), encoder_layers_, layers_.size()).transpose();
}

VaeLoss VaeModel::loss(const Eigen::MatrixXd& batch) const {
    require_batch(batch, d_high_);
    const Eigen::MatrixXd x = batch.transpose();
    const Eigen::MatrixXd codes = run(x, 0, encoder_layers_);
    const Eigen::MatrixXd recon = run(codes, encoder_layers_, layers_.size());
    VaeLoss out;
    out.mse = (recon - x).colwise().squaredNorm().mean();
    out.kl = latent_stats(codes).kl;
    out.total = out.mse + kl_weight_ * out.kl;
    return out;
}

VaeGradient VaeModel::gradient(const Eigen::MatrixXd& batch) const {
    require_batch(batch, d_high_);
    const Eigen::MatrixXd x = batch.transpose();
    const auto b = static_cast<double>(x.cols());

    // activations[k] is the input of layer k; activations.back() the output.
    std::vector<Eigen::MatrixXd> activations{x};
    activations.reserve(layers_.size() + 1);
    for (const auto& layer : layers_) {
        Eigen::MatrixXd z = layer.weights * activations.back();
        z.colwise() += layer.biases;
        apply_activation(z, layer.activation);
        activations.push_back(std::move(z));
    }
    const Eigen::MatrixXd& codes = activations[encoder_layers_];
    const Eigen::MatrixXd& recon = activations.back();
    const LatentStats stats = latent_stats(codes);

    VaeGradient g;
    g.loss.mse = (recon - x).colwise().squaredNorm().mean();
    g.loss.kl = stats.kl;
    g.loss.total = g.loss.mse + kl_weight_ * g.loss.kl;
    g.weights.resize(layers_.size());
    g.biases.resize(layers_.size());

    Eigen::MatrixXd upstream = (2.0 / b) * (recon - x);
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const auto& layer = layers_[k];
        const Eigen::MatrixXd& out = activations[k + 1];
        if (k + 1 == encoder_layers_) {
            // dKL/dz = (mu + (1 - 1/sigma^2)(z - mu)) / B; the sigma part vanishes where floored.
            Eigen::MatrixXd dkl = (codes.colwise() - stats.mean);
            const Eigen::ArrayXd scale =
                stats.floored.select(Eigen::ArrayXd::Zero(stats.sigma.size()),
                                     1.0 - 1.0 / stats.sigma.array().square());
            dkl = (dkl.array().colwise() * scale).matrix();
            dkl.colwise() += stats.mean;
            upstream += (kl_weight_ / b) * dkl;
        }
        Eigen::MatrixXd dz;
        if (layer.activation == Activation::Sigmoid) {
            dz = (upstream.array() * out.array() * (1.0 - out.array())).matrix();
        } else {
            dz = (upstream.array() * (out.array() > 0.0).cast<double>()).matrix();
        }
        g.weights[k] = dz * activations[k].transpose();
        g.biases[k] = dz.rowwise().sum();
        if (k > 0) {
            upstream = layer.weights.transpose() * dz;
        }
    }
    return g;
}

double latent_kl(const Eigen::MatrixXd& latent) {
    if (latent.rows() < 2) {
        throw BatchTooSmall("KL needs at least 2 codes");
    }
    return latent_stats(latent.transpose()).kl;
}

double reconstruction_mse(const VaeModel& model, const Eigen::MatrixXd& samples) {
    if (samples.rows() < 1) {
        throw InsufficientData("reconstruction_mse needs at least one sample");
    }
    const Eigen::MatrixXd recon = model.decode_batch(model.encode_batch(samples));
    return (recon - samples).squaredNorm() / static_cast<double>(samples.size());
}

GradientCheckResult gradient_check(const VaeModel& model, const Eigen::MatrixXd& batch, double step) {
    const VaeGradient analytic = model.gradient(batch);
    VaeModel probe = model;
    GradientCheckResult out;
    auto compare = [&](double& param, double grad) {
        const double saved = param;
        param = saved + step;
        const double up = probe.loss(batch).total;
        param = saved - step;
        const double down = probe.loss(batch).total;
        param = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double abs_err = std::abs(numeric - grad);
        // Gradients below 1e-6 are compared in absolute terms.
        const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(grad), 1e-6});
        out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
        out.max_relative_error = std::max(out.max_relative_error, rel_err);
    };
    for (std::size_t k = 0; k < probe.layers().size(); ++k) {
        auto& layer = probe.layers()[k];
        for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) {
                compare(layer.weights(i, j), analytic.weights[k](i, j));
            }
        }
        for (Eigen::Index i = 0; i < layer.biases.size(); ++i) {
            compare(layer.biases(i), analytic.biases[k](i));
        }
    }
    return out;
}

json VaeModel::to_json() const {
    json j;
    j["d_high"] = d_high_;
    j["d_low"] = d_low_;
    j["kl_weight"] = kl_weight_;
    auto dump_layers = [&](std::size_t first, std::size_t last) {
        json arr = json::array();
        for (std::size_t k = first; k < last; ++k) {
            const auto& l = layers_[k];
            std::vector<double> w;
            w.reserve(static_cast<std::size_t>(l.weights.size()));
            for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
                for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
                    w.push_back(l.weights(r, c));
                }
            }
            arr.push_back({{"inputs", l.weights.cols()},
                           {"outputs", l.weights.rows()},
                           {"activation", to_string(l.activation)},
                           {"weights", w},
                           {"biases", std::vector<double>(l.biases.data(),
                                                          l.biases.data() + l.biases.size())}});
        }
        return arr;
    };
    j["encoder"] = dump_layers(0, encoder_layers_);
    j["decoder"] = dump_layers(encoder_layers_, layers_.size());
    return j;
}

VaeModel VaeModel::from_json(const json& j) {
    VaeModel m;
    m.d_high_ = j.at("d_high").get<std::size_t>();
    m.d_low_ = j.at("d_low").get<std::size_t>();
    m.kl_weight_ = j.at("kl_weight").get<double>();
    VaeArchitecture arch{m.d_high_, m.d_low_, {}, {}};
    std::size_t fan_in = m.d_high_;
    auto load_layers = [&](const json& arr, std::vector<LayerSpec>& specs) {
        for (const auto& jl : arr) {
            MlpLayer l;
            const auto in = jl.at("inputs").get<Eigen::Index>();
            const auto out = jl.at("outputs").get<Eigen::Index>();
            if (static_cast<std::size_t>(in) != fan_in) {
                throw DimensionMismatch(fan_in, static_cast<std::size_t>(in));
            }
            const auto w = jl.at("weights").get<std::vector<double>>();
            const auto bias = jl.at("biases").get<std::vector<double>>();
            if (w.size() != static_cast<std::size_t>(in * out) ||
                bias.size() != static_cast<std::size_t>(out)) {
                throw InvalidConfig("checkpoint layer arrays do not match their shapes");
            }
            l.weights.resize(out, in);
            for (Eigen::Index r = 0; r < out; ++r) {
                for (Eigen::Index c = 0; c < in; ++c) {
                    l.weights(r, c) = w[static_cast<std::size_t>(r * in + c)];
                }
            }
            l.biases = Eigen::Map<const Eigen::VectorXd>(bias.data(), out);
            l.activation = activation_from_string(jl.at("activation").get<std::string>());
            if (!l.weights.allFinite() || !l.biases.allFinite()) {
                throw InvalidConfig("checkpoint contains non-finite weights");
            }
            specs.push_back({static_cast<std::size_t>(out), l.activation});
            m.layers_.push_back(std::move(l));
            fan_in = static_cast<std::size_t>(out);
        }
    };
    load_layers(j.at("encoder"), arch.encoder);
    m.encoder_layers_ = m.layers_.size();
    load_layers(j.at("decoder"), arch.decoder);
    arch.validate();
    return m;
}

json VaeTrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"epochs", epochs},               {"patience", patience},
            {"validation_fraction", validation_fraction},
            {"kl_weight", kl_weight},         {"beta1", beta1},
            {"beta2", beta2},                 {"epsilon", epsilon},
            {"seed", seed}};
}

VaeTrainConfig VaeTrainConfig::from_json(const json& j) {
    VaeTrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    return c;
}

VaeTrainResult train_vae(const Eigen::MatrixXd& samples, const VaeArchitecture& arch,
                         const VaeTrainConfig& config) {
    arch.validate();
    if (static_cast<std::size_t>(samples.cols()) != arch.d_high) {
        throw DimensionMismatch(arch.d_high, static_cast<std::size_t>(samples.cols()));
    }
    if (config.batch_size < 2) {
        throw InvalidConfig("VAE batch size must be at least 2");
    }
    const auto n = static_cast<std::size_t>(samples.rows());
    if (n < 2 * config.batch_size) {
        throw InsufficientData("VAE training needs at least " + std::to_string(2 * config.batch_size) +
                               " samples, got " + std::to_string(n));
    }

    Rng rng(config.seed);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = 0;
    if (config.validation_fraction > 0.0) {
        n_val = std::max<std::size_t>(
            2, static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(n))));
    }
    const std::size_t n_train = n - n_val;
    Eigen::MatrixXd train(static_cast<Eigen::Index>(n_train), samples.cols());
    Eigen::MatrixXd val(static_cast<Eigen::Index>(n_val), samples.cols());
    for (std::size_t i = 0; i < n_train; ++i) {
        train.row(static_cast<Eigen::Index>(i)) = samples.row(order[i]);
    }
    for (std::size_t i = 0; i < n_val; ++i) {
        val.row(static_cast<Eigen::Index>(i)) = samples.row(order[n_train + i]);
    }

    VaeTrainResult result{VaeModel(arch, config.kl_weight, derive_seed(config.seed, 1)), {}};
    VaeModel& model = result.model;
    auto& report = result.report;
    report.train_size = n_train;
    report.validation_size = n_val;

    // Adam moments mirror the layer shapes.
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    for (const auto& l : model.layers()) {
        mw.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
        vw.push_back(mw.back());
        mb.push_back(Eigen::VectorXd::Zero(l.biases.size()));
        vb.push_back(mb.back());
    }
    std::size_t step = 0;

    std::vector<Eigen::Index> idx(n_train);
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::vector<MlpLayer> best_layers = model.layers();
    double best_val = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n_train; start += config.batch_size) {
            std::size_t stop = std::min(start + config.batch_size, n_train);
            // A trailing batch of one sample joins the previous batch.
            if (n_train - stop < 2) {
                stop = n_train;
            }
            Eigen::MatrixXd batch(static_cast<Eigen::Index>(stop - start), samples.cols());
            for (std::size_t i = start; i < stop; ++i) {
                batch.row(static_cast<Eigen::Index>(i - start)) = train.row(idx[i]);
            }
            const VaeGradient g = model.gradient(batch);
            epoch_loss += g.loss.total;
            ++batches;

            ++step;
            const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t k = 0; k < model.layers().size(); ++k) {
                auto& layer = model.layers()[k];
                mw[k] = config.beta1 * mw[k] + (1.0 - config.beta1) * g.weights[k];
                vw[k] = config.beta2 * vw[k] + (1.0 - config.beta2) * g.weights[k].cwiseAbs2();
                mb[k] = config.beta1 * mb[k] + (1.0 - config.beta1) * g.biases[k];
                vb[k] = config.beta2 * vb[k] + (1.0 - config.beta2) * g.biases[k].cwiseAbs2();
                layer.weights.array() -= config.learning_rate * (mw[k].array() / c1) /
                                         ((vw[k].array() / c2).sqrt() + config.epsilon);
                layer.biases.array() -= config.learning_rate * (mb[k].array() / c1) /
                                        ((vb[k].array() / c2).sqrt() + config.epsilon);
            }
            if (stop == n_train) {
                break;
            }
        }
        report.train_loss.push_back(epoch_loss / static_cast<double>(batches));
        const double v = n_val >= 2 ? model.loss(val).total : model.loss(train).total;
        report.validation_loss.push_back(v);
        if (v < best_val) {
            best_val = v;
            best_layers = model.layers();
            report.best_epoch = epoch;
        } else if (epoch - report.best_epoch >= config.patience) {
            break;
        }
    }
    model.layers() = std::move(best_layers);
    report.best_validation_loss = best_val;
    report.validation_mse = reconstruction_mse(model, n_val >= 2 ? val : train);
    return result;
}

void save_checkpoint(const std::filesystem::path& path, const VaeModel& model,
                     const VaeTrainConfig& config) {
    json j = model.to_json();
    j["format"] = "latune-vae";
    j["version"] = 1;
    j["training"] = config.to_json();
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out << j.dump(1) << '\n';
}

VaeModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    const json j = json::parse(in);
    if (j.value("format", std::string{}) != "latune-vae") {
        throw InvalidConfig(path.string() + " is not a VAE checkpoint");
    }
    return VaeModel::from_json(j);
}

}  // namespace latune
