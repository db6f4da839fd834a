#pragma once

// JSON conversions shared by the file formats and the scenario loader.

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mixclass/em.hpp"
#include "mixclass/io.hpp"
#include "mixclass/mcmc.hpp"

namespace mixclass::codec {

using Json = nlohmann::ordered_json;

Json parse(std::string_view text, const std::string& what);

// Every key of `obj` must be listed.
void reject_unknown(const Json& obj, std::initializer_list<std::string_view> keys, const std::string& path);

double number(const Json& j, const std::string& path);
std::int64_t integer(const Json& j, const std::string& path);
Eigen::VectorXd vector(const Json& j, const std::string& path);
Eigen::MatrixXd matrix(const Json& j, const std::string& path);
Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::MatrixXd& m);

PriorSpec priors_from(const Json& j, const ModelSpec& spec, const NamedMatrices& named, PriorSpec base,
                      const std::string& path);
Json priors_to(const PriorSpec& priors);

McmcConfig mcmc_from(const Json& j, McmcConfig base, const std::string& path);
Json mcmc_to(const McmcConfig& cfg);

EmConfig em_from(const Json& j, EmConfig base, const std::string& path);
Json em_to(const EmConfig& cfg);

Json theta_to(const Theta& theta);

}  // namespace mixclass::codec
