//! Embedded copies of the published per-model results tables, plus a
//! consistency check that recomputes F1 from published precision/recall and
//! overall accuracy from recall x support, flagging rows that disagree with
//! the published figures by more than one percentage point.

/// One published per-class row (values are whole percents except support).
#[derive(Clone, Copy, Debug)]
pub struct PublishedRow {
    pub class_name: &'static str,
    pub precision: u32,
    pub recall: u32,
    pub f1: u32,
    pub support: u32,
}

#[derive(Clone, Copy, Debug)]
pub struct PublishedTable {
    pub model: &'static str,
    /// Published overall accuracy in whole percent.
    pub accuracy: u32,
    pub rows: [PublishedRow; 8],
}

const fn row(
    class_name: &'static str,
    precision: u32,
    recall: u32,
    f1: u32,
    support: u32,
) -> PublishedRow {
    PublishedRow {
        class_name,
        precision,
        recall,
        f1,
        support,
    }
}

pub const XCEPTION: PublishedTable = PublishedTable {
    model: "Xception",
    accuracy: 93,
    rows: [
        row("Normal Pylorus", 93, 95, 94, 86),
        row("Normal Z-Line", 95, 93, 94, 89),
        row("Dyed Resection Margin", 96, 99, 98, 99),
        row("Ulcerative Colitis", 76, 92, 83, 87),
        row("Dyed Lifted Polyp", 94, 95, 94, 115),
        row("Normal Cecum", 93, 75, 83, 110),
        row("Esophagitis", 96, 94, 95, 117),
        row("Polyps", 97, 99, 98, 97),
    ],
};

pub const VGG19: PublishedTable = PublishedTable {
    model: "VGG19",
    accuracy: 92,
    rows: [
        row("Normal Pylorus", 91, 94, 93, 86),
        row("Normal Z-Line", 95, 89, 92, 89),
        row("Dyed Resection Margin", 99, 99, 99, 99),
        row("Ulcerative Colitis", 76, 93, 84, 87),
        row("Dyed Lifted Polyp", 90, 97, 93, 115),
        row("Normal Cecum", 94, 75, 83, 110),
        row("Esophagitis", 94, 91, 93, 117),
        row("Polyps", 96, 96, 96, 97),
    ],
};

pub const RESNET: PublishedTable = PublishedTable {
    model: "ResNet152V2",
    accuracy: 91,
    rows: [
        row("Normal Pylorus", 92, 97, 94, 86),
        row("Normal Z-Line", 84, 88, 90, 89),
        row("Dyed Resection Margin", 96, 100, 98, 99),
        row("Ulcerative Colitis", 78, 79, 79, 87),
        row("Dyed Lifted Polyp", 99, 83, 91, 115),
        row("Normal Cecum", 85, 83, 84, 110),
        row("Esophagitis", 93, 95, 94, 117),
        row("Polyps", 99, 93, 96, 97),
    ],
};

pub const INCEPTION: PublishedTable = PublishedTable {
    model: "Inception",
    accuracy: 90,
    rows: [
        row("Normal Pylorus", 91, 97, 94, 86),
        row("Normal Z-Line", 95, 89, 92, 89),
        row("Dyed Resection Margin", 98, 99, 98, 99),
        row("Ulcerative Colitis", 75, 83, 79, 87),
        row("Dyed Lifted Polyp", 91, 92, 92, 115),
        row("Normal Cecum", 85, 77, 81, 110),
        row("Esophagitis", 93, 85, 89, 117),
        row("Polyps", 91, 99, 95, 97),
    ],
};

pub const ALL_TABLES: [&PublishedTable; 4] = [&XCEPTION, &VGG19, &RESNET, &INCEPTION];

/// Rows where the published tables disagree by more than
/// [`FLAG_THRESHOLD_PP`] are `flagged`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyFinding {
    pub model: &'static str,
    /// Class name, or `"overall"` for the accuracy cross-check.
    pub row: &'static str,
    /// Recomputed value in percent.
    pub recomputed: f64,
    /// Published value in percent.
    pub published: f64,
    pub delta: f64,
    pub flagged: bool,
}

pub const FLAG_THRESHOLD_PP: f64 = 1.0;

fn finding(
    model: &'static str,
    row: &'static str,
    recomputed: f64,
    published: f64,
) -> ConsistencyFinding {
    let delta = recomputed - published;
    ConsistencyFinding {
        model,
        row,
        recomputed,
        published,
        delta,
        flagged: delta.abs() > FLAG_THRESHOLD_PP,
    }
}

/// Recomputes each table's F1 rows and overall accuracy from its own
/// published numbers. The returned list has one finding per class row plus
/// one `"overall"` finding per model.
pub fn check_paper_consistency() -> Vec<ConsistencyFinding> {
    let mut findings = Vec::new();
    for table in ALL_TABLES {
        let mut recall_weighted = 0.0f64;
        let mut total_support = 0u32;
        for r in &table.rows {
            let (p, rc) = (r.precision as f64, r.recall as f64);
            let f1 = if p + rc > 0.0 {
                2.0 * p * rc / (p + rc)
            } else {
                0.0
            };
            findings.push(finding(table.model, r.class_name, f1, r.f1 as f64));
            recall_weighted += rc * r.support as f64;
            total_support += r.support;
        }
        findings.push(finding(
            table.model,
            "overall",
            recall_weighted / total_support as f64,
            table.accuracy as f64,
        ));
    }
    findings
}
