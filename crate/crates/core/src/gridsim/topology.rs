use std::collections::BTreeSet;

use crate::xml::{self, fmt_f64, XmlError, XmlWriter};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub cluster_id: String,
    pub wn_count: u32,
    /// Multiplier on compute duration; 1.0 is nominal, 2.0 is half speed.
    pub wn_speed_factor: f64,
    /// Bytes per second; `inf` means transfers are free.
    pub local_se_bandwidth: f64,
    /// Jobs the CE will hold waiting for a worker node.
    pub ce_queue_capacity: u32,
}

impl Cluster {
    pub fn new(cluster_id: impl Into<String>, wn_count: u32) -> Self {
        Self {
            cluster_id: cluster_id.into(),
            wn_count,
            wn_speed_factor: 1.0,
            local_se_bandwidth: f64::INFINITY,
            ce_queue_capacity: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    pub central_se_bandwidth: f64,
    pub clusters: Vec<Cluster>,
}

impl GridTopology {
    pub fn new(clusters: Vec<Cluster>) -> Self {
        Self {
            central_se_bandwidth: f64::INFINITY,
            clusters,
        }
    }

    /// `count` identical clusters of `wns` nodes with free transfers.
    pub fn uniform(count: usize, wns: u32) -> Self {
        Self::new(
            (0..count)
                .map(|k| Cluster::new(format!("cluster-{k:02}"), wns))
                .collect(),
        )
    }

    pub fn total_wns(&self) -> u64 {
        self.clusters.iter().map(|c| u64::from(c.wn_count)).sum()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.clusters.is_empty() {
            out.push("topology needs >= 1 cluster".to_string());
        }
        if self.central_se_bandwidth.is_nan() || self.central_se_bandwidth <= 0.0 {
            out.push("central_se_bandwidth must be > 0".to_string());
        }
        let mut ids = BTreeSet::new();
        for c in &self.clusters {
            if !ids.insert(&c.cluster_id) {
                out.push(format!("duplicate cluster id {:?}", c.cluster_id));
            }
            if c.wn_count == 0 {
                out.push(format!("cluster {:?}: wn_count must be >= 1", c.cluster_id));
            }
            if !(c.wn_speed_factor.is_finite() && c.wn_speed_factor > 0.0) {
                out.push(format!(
                    "cluster {:?}: speed factor must be > 0",
                    c.cluster_id
                ));
            }
            if c.local_se_bandwidth.is_nan() || c.local_se_bandwidth <= 0.0 {
                out.push(format!("cluster {:?}: bandwidth must be > 0", c.cluster_id));
            }
            if c.ce_queue_capacity == 0 {
                out.push(format!(
                    "cluster {:?}: ce_queue_capacity must be >= 1",
                    c.cluster_id
                ));
            }
        }
        out
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open(
            "topology",
            &[("central_se_bandwidth", fmt_f64(self.central_se_bandwidth))],
        );
        for c in &self.clusters {
            w.empty(
                "cluster",
                &[
                    ("id", c.cluster_id.clone()),
                    ("wn_count", c.wn_count.to_string()),
                    ("wn_speed_factor", fmt_f64(c.wn_speed_factor)),
                    ("local_se_bandwidth", fmt_f64(c.local_se_bandwidth)),
                    ("ce_queue_capacity", c.ce_queue_capacity.to_string()),
                ],
            );
        }
        w.close("topology");
        w.finish()
    }

    pub fn from_xml(doc: &str) -> Result<Self, XmlError> {
        let root = xml::parse(doc)?;
        root.expect_name("topology")?;
        let clusters = root
            .children_named("cluster")
            .map(|c| {
                Ok(Cluster {
                    cluster_id: c.attr("id")?.to_string(),
                    wn_count: c.parse_attr("wn_count")?,
                    wn_speed_factor: c.parse_attr_opt("wn_speed_factor")?.unwrap_or(1.0),
                    local_se_bandwidth: c
                        .parse_attr_opt("local_se_bandwidth")?
                        .unwrap_or(f64::INFINITY),
                    ce_queue_capacity: c.parse_attr_opt("ce_queue_capacity")?.unwrap_or(1_000_000),
                })
            })
            .collect::<Result<_, XmlError>>()?;
        Ok(Self {
            central_se_bandwidth: root
                .parse_attr_opt("central_se_bandwidth")?
                .unwrap_or(f64::INFINITY),
            clusters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xml_round_trip_with_infinite_bandwidth() {
        let mut t = GridTopology::uniform(2, 4);
        t.clusters[1].wn_speed_factor = 1.5;
        t.clusters[1].local_se_bandwidth = 1e6;
        let doc = t.to_xml();
        assert!(doc.contains("central_se_bandwidth=\"inf\""));
        let back = GridTopology::from_xml(&doc).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_xml(), doc);
    }

    #[test]
    fn invalid_topologies_are_reported() {
        let mut t = GridTopology::uniform(1, 0);
        t.clusters.push(t.clusters[0].clone());
        t.clusters[0].wn_speed_factor = 0.0;
        let v = t.violations();
        assert!(v.iter().any(|s| s.contains("duplicate")));
        assert!(v.iter().any(|s| s.contains("wn_count")));
        assert!(v.iter().any(|s| s.contains("speed")));
        assert!(GridTopology::new(vec![]).violations().len() == 1);
    }
}
