//! Service topology: which services exist and which call trees requests
//! follow.

use std::collections::BTreeSet;

use postsample_core::model::ServiceId;
use serde::{Deserialize, Serialize};

/// One operation in a call tree. Children are called one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallNode {
    pub service: ServiceId,
    pub operation: String,
    /// Median own latency in ms, excluding children.
    pub median_ms: f64,
    /// Lognormal shape parameter.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Mean INFO logs per call.
    #[serde(default = "default_info_rate")]
    pub info_rate: f64,
    /// Mean WARN logs per call.
    #[serde(default = "default_warn_rate")]
    pub warn_rate: f64,
    #[serde(default)]
    pub children: Vec<CallNode>,
}

/// INFO lines per call for operations that keep an audit trail.
pub const AUDIT_INFO_RATE: f64 = 20.0;

fn default_sigma() -> f64 {
    0.3
}

fn default_info_rate() -> f64 {
    1.8
}

fn default_warn_rate() -> f64 {
    0.03
}

impl CallNode {
    pub fn new(service: &str, operation: &str, median_ms: f64) -> Self {
        CallNode {
            service: service.into(),
            operation: operation.into(),
            median_ms,
            sigma: default_sigma(),
            info_rate: default_info_rate(),
            warn_rate: default_warn_rate(),
            children: Vec::new(),
        }
    }

    pub fn info_rate(mut self, rate: f64) -> Self {
        self.info_rate = rate;
        self
    }

    pub fn calls(mut self, children: Vec<CallNode>) -> Self {
        self.children = children;
        self
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(CallNode::depth).max().unwrap_or(0)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a CallNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallTemplate {
    pub name: String,
    /// Relative share of requests.
    pub weight: f64,
    pub root: CallNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub services: Vec<ServiceId>,
    pub templates: Vec<CallTemplate>,
}

impl Topology {
    pub fn service_set(&self) -> BTreeSet<&ServiceId> {
        self.services.iter().collect()
    }

    /// Services a template touches.
    pub fn template_services(template: &CallTemplate) -> BTreeSet<&ServiceId> {
        let mut out = BTreeSet::new();
        template.root.visit(&mut |n| {
            out.insert(&n.service);
        });
        out
    }

    /// Expected share of requests that pass through `service`.
    pub fn traffic_share(&self, service: &ServiceId) -> f64 {
        let total: f64 = self.templates.iter().map(|t| t.weight).sum();
        self.templates
            .iter()
            .filter(|t| Self::template_services(t).contains(service))
            .map(|t| t.weight)
            .sum::<f64>()
            / total
    }

    /// A ten-service web shop. Checkout and refund flows are rare, so the
    /// services only they reach (checkout, payment, shipping, notification)
    /// carry about 4% of the traffic. Those order-path services keep audit
    /// logs and write far more INFO lines per call than the rest.
    pub fn default_shop() -> Topology {
        let n = CallNode::new;
        let browse = n("frontend", "GET /products", 8.0).calls(vec![
            n("catalog", "ListProducts", 6.0).calls(vec![n("inventory", "GetStock", 4.0)]),
            n("recommendation", "Recommend", 12.0).calls(vec![n("catalog", "GetProduct", 3.0)]),
        ]);
        let view_cart = n("frontend", "GET /cart", 6.0).calls(vec![
            n("auth", "VerifyToken", 2.0),
            n("cart", "GetCart", 5.0).calls(vec![n("catalog", "GetPrices", 4.0).calls(vec![n("inventory", "GetStock", 4.0)])]),
        ]);
        let login = n("frontend", "POST /login", 7.0)
            .calls(vec![n("auth", "Login", 15.0).calls(vec![n("cart", "MergeGuestCart", 6.0)])]);
        // Order-path operations log an audit trail.
        let o = |service: &str, operation: &str, median_ms: f64| n(service, operation, median_ms).info_rate(AUDIT_INFO_RATE);
        let checkout = n("frontend", "POST /checkout", 10.0).calls(vec![o("checkout", "PlaceOrder", 12.0).calls(vec![
            n("cart", "GetCart", 5.0),
            o("payment", "Charge", 35.0).calls(vec![o("notification", "SendReceipt", 9.0)]),
            o("shipping", "CreateShipment", 18.0).calls(vec![n("inventory", "Reserve", 5.0)]),
        ])]);
        let refund = n("frontend", "POST /refund", 9.0).calls(vec![o("checkout", "RefundOrder", 10.0).calls(vec![
            o("payment", "Refund", 30.0).calls(vec![o("notification", "SendRefundNotice", 8.0)]),
            o("shipping", "CancelShipment", 12.0).calls(vec![
                n("inventory", "Release", 4.0).calls(vec![n("catalog", "UpdateAvailability", 3.0)])
            ]),
        ])]);
        let services = [
            "frontend",
            "auth",
            "catalog",
            "recommendation",
            "cart",
            "inventory",
            "checkout",
            "payment",
            "shipping",
            "notification",
        ];
        Topology {
            services: services.iter().map(|s| ServiceId::from(*s)).collect(),
            templates: vec![
                CallTemplate {
                    name: "browse".into(),
                    weight: 0.55,
                    root: browse,
                },
                CallTemplate {
                    name: "view_cart".into(),
                    weight: 0.26,
                    root: view_cart,
                },
                CallTemplate {
                    name: "login".into(),
                    weight: 0.15,
                    root: login,
                },
                CallTemplate {
                    name: "checkout".into(),
                    weight: 0.03,
                    root: checkout,
                },
                CallTemplate {
                    name: "refund".into(),
                    weight: 0.01,
                    root: refund,
                },
            ],
        }
    }

    /// Services carrying at most `max_share` of the traffic, in declaration
    /// order.
    pub fn low_traffic_services(&self, max_share: f64) -> Vec<ServiceId> {
        self.services
            .iter()
            .filter(|s| self.traffic_share(s) <= max_share)
            .cloned()
            .collect()
    }
}
