#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace latune {

enum class Activation { ReLU, Sigmoid };

struct LayerSpec {
    std::size_t size = 0;
    Activation activation = Activation::ReLU;
};

// Encoder/decoder layer schedule. Each list holds the output size of every
// layer; the last encoder layer must have d_low outputs and the last decoder
// layer d_high outputs.
struct VaeArchitecture {
    std::size_t d_high = 0;
    std::size_t d_low = 0;
    std::vector<LayerSpec> encoder;
    std::vector<LayerSpec> decoder;

    // d_high -> d_high/2 -> d_high/4 -> d_low, mirrored for the decoder;
    // ReLU hidden layers and sigmoid outputs. Hidden widths are at least 1.
    static VaeArchitecture standard(std::size_t d_high, std::size_t d_low);

    void validate() const;
};

struct MlpLayer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd biases;
    Activation activation = Activation::ReLU;
};

struct VaeLoss {
    double total = 0.0;
    double mse = 0.0;
    double kl = 0.0;
};

// Per-layer gradients, laid out like VaeModel::layers().
struct VaeGradient {
    VaeLoss loss;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

// Deterministic autoencoder whose loss adds a KL penalty pulling the batch
// statistics of the latent codes toward a standard normal.
class VaeModel {
public:
    static constexpr double kSigmaFloor = 1e-6;

    // Glorot-uniform weights, zero biases.
    VaeModel(const VaeArchitecture& arch, double kl_weight, std::uint64_t seed);

    [[nodiscard]] std::size_t d_high() const { return d_high_; }
    [[nodiscard]] std::size_t d_low() const { return d_low_; }
    [[nodiscard]] double kl_weight() const { return kl_weight_; }
    void set_kl_weight(double w) { kl_weight_ = w; }
    [[nodiscard]] std::size_t encoder_layer_count() const { return encoder_layers_; }
    [[nodiscard]] const std::vector<MlpLayer>& layers() const { return layers_; }
    [[nodiscard]] std::vector<MlpLayer>& layers() { return layers_; }
    [[nodiscard]] std::size_t parameter_count() const;

    [[nodiscard]] Eigen::VectorXd encode(const Eigen::VectorXd& theta) const;
    [[nodiscard]] Eigen::VectorXd decode(const Eigen::VectorXd& z) const;
    [[nodiscard]] Eigen::VectorXd reconstruct(const Eigen::VectorXd& theta) const {
        return decode(encode(theta));
    }
    // Batched variants; one sample per row.
    [[nodiscard]] Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& thetas) const;
    [[nodiscard]] Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& zs) const;

    // mse = mean over rows of the squared reconstruction norm; kl summed
    // over latent coordinates. Throws BatchTooSmall for fewer than 2 rows.
    [[nodiscard]] VaeLoss loss(const Eigen::MatrixXd& batch) const;
    [[nodiscard]] VaeGradient gradient(const Eigen::MatrixXd& batch) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static VaeModel from_json(const nlohmann::json& j);

private:
    VaeModel() = default;
    [[nodiscard]] Eigen::MatrixXd run(const Eigen::MatrixXd& input_cols, std::size_t first,
                                      std::size_t last) const;

    std::size_t d_high_ = 0;
    std::size_t d_low_ = 0;
    double kl_weight_ = 1.0;
    std::size_t encoder_layers_ = 0;
    std::vector<MlpLayer> layers_;
};

// Batch-statistics KL term of `latent` (one code per row).
double latent_kl(const Eigen::MatrixXd& latent);

// Mean squared error per element between samples and their reconstructions.
double reconstruction_mse(const VaeModel& model, const Eigen::MatrixXd& samples);

struct GradientCheckResult {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
};

// Compares VaeModel::gradient with central differences of the total loss
// over every weight and bias.
GradientCheckResult gradient_check(const VaeModel& model, const Eigen::MatrixXd& batch,
                                   double step = 1e-5);

struct VaeTrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 500;
    std::size_t patience = 50;
    double validation_fraction = 0.1;
    double kl_weight = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    static VaeTrainConfig from_json(const nlohmann::json& j);
};

struct VaeTrainReport {
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    std::size_t best_epoch = 0;
    double best_validation_loss = 0.0;
    // Per-element reconstruction MSE of the returned model on the holdout.
    double validation_mse = 0.0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
};

struct VaeTrainResult {
    VaeModel model;
    VaeTrainReport report;
};

// Trains with Adam on shuffled mini-batches, holding out a validation split,
// and returns the weights with the lowest validation loss. Needs at least
// 2 * batch_size samples (InsufficientData otherwise).
VaeTrainResult train_vae(const Eigen::MatrixXd& samples, const VaeArchitecture& arch,
                         const VaeTrainConfig& config);

// Checkpoint: architecture, weights (row-major) and the training config.
void save_checkpoint(const std::filesystem::path& path, const VaeModel& model,
                     const VaeTrainConfig& config);
VaeModel load_checkpoint(const std::filesystem::path& path);

}  // namespace latune
