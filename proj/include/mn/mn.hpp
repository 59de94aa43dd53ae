#pragma once

// Everything except the HTTP transport, which pulls in cpp-httplib (include mn/http_transport.hpp).

#include "mn/correctness.hpp"
#include "mn/corpus.hpp"
#include "mn/diversity.hpp"
#include "mn/error.hpp"
#include "mn/hash.hpp"
#include "mn/judge.hpp"
#include "mn/mock_provider.hpp"
#include "mn/novelty.hpp"
#include "mn/openai_provider.hpp"
#include "mn/parallel.hpp"
#include "mn/pipeline.hpp"
#include "mn/provider.hpp"
#include "mn/templates.hpp"
#include "mn/textops.hpp"
#include "mn/views.hpp"
