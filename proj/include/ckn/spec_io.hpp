#pragma once

#include <json.hpp>
#include <string>

#include "ckn/spec.hpp"

namespace ckn {

using Json = nlohmann::ordered_json;

Json to_json(const KernelSpec& k);
Json to_json(const PoolingSpec& p);
Json to_json(const LayerSpec& l);
Json to_json(const NetworkSpec& n);

KernelSpec kernel_from_json(const Json& j);
PoolingSpec pooling_from_json(const Json& j);
LayerSpec layer_from_json(const Json& j);
NetworkSpec network_from_json(const Json& j);

// Pretty-printed text with a trailing newline; byte-stable for identical specs.
std::string dump(const Json& j);

Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace ckn
