#include <dlfcn.h>

#include <string>

#include "fticir/backbone.hpp"
#include "fticir/errors.hpp"
#include "fticir/plugin_abi.h"

namespace fticir {

namespace {

struct PluginApi {
    decltype(&fticir_plugin_abi_version) abi_version = nullptr;
    decltype(&fticir_plugin_create) create = nullptr;
    decltype(&fticir_plugin_destroy) destroy = nullptr;
    decltype(&fticir_plugin_last_error) last_error = nullptr;
    decltype(&fticir_plugin_dims) dims = nullptr;
    decltype(&fticir_plugin_encode_image) encode_image = nullptr;
    decltype(&fticir_plugin_tokenize) tokenize = nullptr;
    decltype(&fticir_plugin_detokenize) detokenize = nullptr;
    decltype(&fticir_plugin_encode_text) encode_text = nullptr;
    decltype(&fticir_plugin_encode_text_vjp) encode_text_vjp = nullptr;
    decltype(&fticir_plugin_fingerprint) fingerprint = nullptr;
};

template <typename Fn>
void bind_symbol(void* handle, const char* name, Fn& slot) {
    slot = reinterpret_cast<Fn>(dlsym(handle, name));
    if (slot == nullptr) {
        fail(ErrorKind::config, std::string("backbone plugin is missing symbol ") + name);
    }
}

class PluginBackbone final : public Backbone {
public:
    PluginBackbone(const std::filesystem::path& library, const BackboneConfig& requested) : config_(requested) {
        handle_ = dlopen(library.c_str(), RTLD_NOW | RTLD_LOCAL);
        if (handle_ == nullptr) {
            const char* err = dlerror();
            fail(ErrorKind::config, "cannot load backbone plugin " + library.string() + ": " + (err ? err : "?"));
        }
        try {
            bind_symbol(handle_, "fticir_plugin_abi_version", api_.abi_version);
            bind_symbol(handle_, "fticir_plugin_create", api_.create);
            bind_symbol(handle_, "fticir_plugin_destroy", api_.destroy);
            bind_symbol(handle_, "fticir_plugin_last_error", api_.last_error);
            bind_symbol(handle_, "fticir_plugin_dims", api_.dims);
            bind_symbol(handle_, "fticir_plugin_encode_image", api_.encode_image);
            bind_symbol(handle_, "fticir_plugin_tokenize", api_.tokenize);
            bind_symbol(handle_, "fticir_plugin_detokenize", api_.detokenize);
            bind_symbol(handle_, "fticir_plugin_encode_text", api_.encode_text);
            bind_symbol(handle_, "fticir_plugin_encode_text_vjp", api_.encode_text_vjp);
            bind_symbol(handle_, "fticir_plugin_fingerprint", api_.fingerprint);
            if (api_.abi_version() != FTICIR_PLUGIN_ABI_VERSION) {
                fail(ErrorKind::config, "backbone plugin ABI version " + std::to_string(api_.abi_version()) +
                                            " != " + std::to_string(FTICIR_PLUGIN_ABI_VERSION));
            }
            Config snapshot;
            requested.to_config(snapshot);
            ctx_ = api_.create(snapshot.serialize().c_str());
            if (ctx_ == nullptr) {
                fail(ErrorKind::config, "backbone plugin failed to initialise");
            }
            fticir_plugin_dims_t dims{};
            check(api_.dims(ctx_, &dims));
            // The plugin owns the true dimensions.
            config_.d_embed = dims.d_embed;
            config_.d_patch = dims.d_patch;
            config_.m_patches = dims.m_patches;
            config_.d_token = dims.d_token;
            config_.max_text_len = dims.max_text_len;
            config_.validate();
        } catch (...) {
            if (ctx_ != nullptr) api_.destroy(ctx_);
            dlclose(handle_);
            throw;
        }
    }

    ~PluginBackbone() override {
        api_.destroy(ctx_);
        dlclose(handle_);
    }

    PluginBackbone(const PluginBackbone&) = delete;
    PluginBackbone& operator=(const PluginBackbone&) = delete;

    const BackboneConfig& config() const override { return config_; }

    ImageFeatures encode_image(const Image& image) const override {
        ImageFeatures out;
        out.global.resize(config_.d_embed);
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> patches(config_.m_patches,
                                                                                       config_.d_patch);
        if (api_.encode_image(ctx_, image.rgb.data(), image.width, image.height, out.global.data(), patches.data()) !=
            0) {
            fail(ErrorKind::input, std::string("plugin encode_image: ") + api_.last_error(ctx_));
        }
        out.patches = patches;
        return out;
    }

    TokenSequence tokenize(std::string_view text) const override {
        std::string owned(text);
        std::vector<int> ids(static_cast<std::size_t>(config_.max_text_len) + 1);
        std::vector<int> mask(ids.size());
        int count = 0;
        if (api_.tokenize(ctx_, owned.c_str(), ids.data(), mask.data(), static_cast<int>(ids.size()), &count) != 0) {
            fail(ErrorKind::input, std::string("plugin tokenize: ") + api_.last_error(ctx_));
        }
        if (count > config_.max_text_len) {
            fail(ErrorKind::input, "text exceeds max_text_len " + std::to_string(config_.max_text_len));
        }
        TokenSequence seq;
        seq.ids.assign(ids.begin(), ids.begin() + count);
        for (int i = 0; i < count; ++i) {
            if (mask[static_cast<std::size_t>(i)]) seq.slots.push_back(PseudoSlot{static_cast<std::size_t>(i), {}});
        }
        return seq;
    }

    std::string detokenize(const TokenSequence& tokens) const override {
        std::vector<char> buf(4096);
        for (int attempt = 0; attempt < 4; ++attempt) {
            if (api_.detokenize(ctx_, tokens.ids.data(), static_cast<int>(tokens.ids.size()), buf.data(),
                                static_cast<int>(buf.size())) == 0) {
                return std::string(buf.data());
            }
            buf.resize(buf.size() * 4);
        }
        fail(ErrorKind::input, std::string("plugin detokenize: ") + api_.last_error(ctx_));
    }

    ag::Tensor encode_text(const TokenSequence& tokens) const override {
        const int d_token = config_.d_token;
        auto positions = std::make_shared<std::vector<int>>();
        auto vectors = std::make_shared<std::vector<double>>();
        std::vector<ag::Tensor> inputs;
        for (const PseudoSlot& slot : tokens.slots) {
            require(slot.vector.defined() && slot.vector.rows() == 1 && slot.vector.cols() == d_token,
                    ErrorKind::shape, "pseudo vector width must be d_token=" + std::to_string(d_token));
            positions->push_back(static_cast<int>(slot.position));
            for (int c = 0; c < d_token; ++c) vectors->push_back(slot.vector.value()(0, c));
            inputs.push_back(slot.vector);
        }
        auto ids = std::make_shared<std::vector<int>>(tokens.ids);
        Eigen::MatrixXd out(1, config_.d_embed);
        if (api_.encode_text(ctx_, ids->data(), static_cast<int>(ids->size()), positions->data(), vectors->data(),
                             static_cast<int>(positions->size()), out.data()) != 0) {
            fail(ErrorKind::input, std::string("plugin encode_text: ") + api_.last_error(ctx_));
        }
        const PluginApi api = api_;
        void* ctx = ctx_;
        const int d_embed = config_.d_embed;
        return ag::make_op(std::move(out), inputs, [=](const ag::Node& self) {
            std::vector<double> grad_out(static_cast<std::size_t>(d_embed));
            for (int c = 0; c < d_embed; ++c) grad_out[static_cast<std::size_t>(c)] = self.grad(0, c);
            std::vector<double> grad_in(vectors->size());
            if (api.encode_text_vjp(ctx, ids->data(), static_cast<int>(ids->size()), positions->data(),
                                    vectors->data(), static_cast<int>(positions->size()), grad_out.data(),
                                    grad_in.data()) != 0) {
                fail(ErrorKind::input, std::string("plugin encode_text_vjp: ") + api.last_error(ctx));
            }
            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                Eigen::MatrixXd g(1, d_token);
                for (int c = 0; c < d_token; ++c) g(0, c) = grad_in[i * static_cast<std::size_t>(d_token) + c];
                self.parents[i]->accumulate(g);
            }
        });
    }

    std::uint64_t weights_fingerprint() const override {
        unsigned long long fp = 0;
        check(api_.fingerprint(ctx_, &fp));
        return fp;
    }

private:
    void check(int status) const {
        if (status != 0) {
            fail(ErrorKind::input, std::string("backbone plugin: ") + api_.last_error(ctx_));
        }
    }

    BackboneConfig config_;
    void* handle_ = nullptr;
    void* ctx_ = nullptr;
    PluginApi api_;
};

}  // namespace

std::unique_ptr<Backbone> load_plugin_backbone(const std::filesystem::path& library, const BackboneConfig& config) {
    return std::make_unique<PluginBackbone>(library, config);
}

}  // namespace fticir
