#pragma once

// HTTP retrieval service: POST /search, GET /images/{id}, GET /health.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "fticir/backbone.hpp"
#include "fticir/config.hpp"
#include "fticir/model.hpp"
#include "fticir/retrieval.hpp"

namespace httplib {
class Server;
}

namespace fticir {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path checkpoint;
    std::filesystem::path index;
    std::filesystem::path image_dir;
    std::size_t max_upload_bytes = 8u << 20;
    std::size_t max_top_k = 1000;
    std::string cors_origin = "*";

    // service.host, service.port, service.checkpoint, service.index,
    // service.images, service.max_upload_bytes, service.max_top_k,
    // service.cors_origin
    static ServiceConfig from_config(const Config& cfg);
};

struct SearchRequest {
    std::optional<std::string> reference_id;
    std::optional<std::vector<std::uint8_t>> image_upload;
    std::string modification;
    std::size_t top_k = 20;
};

// Parses the JSON body {"reference_id", "modification", "top_k"}; input
// errors on malformed requests.
SearchRequest parse_search_json(std::string_view body);

struct ServiceResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Loads checkpoint, index and image directory named in the config.
    void initialize();
    // In-memory state; `image_dir` may be empty when only uploads are served.
    void initialize(std::unique_ptr<Backbone> backbone, Model model, RetrievalIndex index,
                    std::optional<std::filesystem::path> image_dir);
    bool ready() const { return ready_.load(); }

    ServiceResponse search(const SearchRequest& request) const;
    ServiceResponse image(const std::string& id) const;
    ServiceResponse health() const;

    // Binds and serves until stop(); returns the bound port through
    // on_listening before blocking.
    void listen(const std::function<void(int)>& on_listening = {});
    // Binds without initializing; pair with initialize() from another thread.
    int bind();
    void serve_bound();
    void stop();

    const ServiceConfig& config() const { return config_; }

private:
    void install_routes();

    ServiceConfig config_;
    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<Backbone> backbone_;
    std::optional<Model> model_;
    std::optional<RetrievalIndex> index_;
    std::unique_ptr<Retriever> retriever_;
    std::string config_hash_;
    std::atomic<bool> ready_{false};
};

// Scores as emitted by every interface: 6 decimals.
std::string format_score(double score);

}  // namespace fticir
