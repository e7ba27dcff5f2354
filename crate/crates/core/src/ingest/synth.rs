//! Seeded synthetic corpus with the five-table MIMICSQL shape, plus a
//! question/SQL bank instantiated from fixed templates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::schema::{TableName, TableSet};
use super::{build_repository, IngestError};
use crate::model::{Repository, Value};
use crate::sqlmini::{PairKind, QaPair};

/// Inclusive row-count range, written `"min..max"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowRange {
    pub min: usize,
    pub max: usize,
}

impl RowRange {
    pub const fn new(min: usize, max: usize) -> Self {
        RowRange { min, max }
    }
}

impl FromStr for RowRange {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::InvalidSpec(format!("row range `{s}` is not `min..max`"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let min = a.trim().parse().map_err(|_| bad())?;
        let max = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad())?;
        Ok(RowRange { min, max })
    }
}

impl fmt::Display for RowRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub seed: u64,
    pub rows: BTreeMap<TableName, RowRange>,
    /// Value pools keyed `TABLE.column`. Linked pools (diagnosis code and
    /// titles, lab item id/label/unit, drug and dosage) are indexed together.
    pub vocabularies: BTreeMap<String, Vec<String>>,
    /// Total number of single-patient questions, spread evenly over patients.
    pub single_questions: usize,
    pub multiple_questions: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let rows = BTreeMap::from([
            (TableName::Demographic, RowRange::new(1, 1)),
            (TableName::Diagnoses, RowRange::new(1, 4)),
            (TableName::Procedures, RowRange::new(0, 3)),
            (TableName::Prescriptions, RowRange::new(1, 5)),
            (TableName::Lab, RowRange::new(3, 12)),
        ]);
        SynthSpec {
            n_patients: 100,
            seed: 7,
            rows,
            vocabularies: default_vocabularies(),
            single_questions: 1329,
            multiple_questions: 300,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    n_patients: Option<usize>,
    seed: Option<u64>,
    #[serde(default)]
    tables: BTreeMap<String, TableFile>,
    #[serde(default)]
    vocabularies: BTreeMap<String, Vec<String>>,
    questions: Option<QuestionsFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    rows: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionsFile {
    single: Option<usize>,
    multiple: Option<usize>,
}

impl SynthSpec {
    /// Corpus shaped like the 4,000-patient retrieval collection.
    pub fn retrieval_default() -> Self {
        SynthSpec {
            n_patients: 4000,
            single_questions: 0,
            multiple_questions: 3673,
            ..SynthSpec::default()
        }
    }

    /// Parses the key-value configuration (TOML), layering it over defaults.
    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        let file: SpecFile =
            toml::from_str(text).map_err(|e| IngestError::InvalidSpec(e.to_string()))?;
        let mut spec = SynthSpec::default();
        if let Some(n) = file.n_patients {
            spec.n_patients = n;
        }
        if let Some(s) = file.seed {
            spec.seed = s;
        }
        for (name, t) in file.tables {
            let table = TableName::parse(&name)
                .ok_or_else(|| IngestError::InvalidSpec(format!("unknown table {name}")))?;
            spec.rows.insert(table, t.rows.parse()?);
        }
        for (column, pool) in file.vocabularies {
            spec.vocabularies.insert(column, pool);
        }
        if let Some(q) = file.questions {
            if let Some(n) = q.single {
                spec.single_questions = n;
            }
            if let Some(n) = q.multiple {
                spec.multiple_questions = n;
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n_patients == 0 {
            return Err(IngestError::InvalidSpec(
                "n_patients must be at least 1".into(),
            ));
        }
        for (table, r) in &self.rows {
            if r.min > r.max {
                return Err(IngestError::InvalidSpec(format!(
                    "{table}: empty row range {r}"
                )));
            }
        }
        for column in REFERENCED_POOLS {
            if self.vocabularies.get(*column).is_none_or(|p| p.is_empty()) {
                return Err(IngestError::EmptyVocabulary {
                    column: column.to_string(),
                });
            }
        }
        Ok(())
    }

    fn range(&self, table: TableName) -> RowRange {
        self.rows
            .get(&table)
            .copied()
            .unwrap_or(RowRange::new(0, 0))
    }

    fn pool(&self, column: &str) -> &[String] {
        self.vocabularies
            .get(column)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

const REFERENCED_POOLS: &[&str] = &[
    "DEMOGRAPHIC.name",
    "DEMOGRAPHIC.gender",
    "DEMOGRAPHIC.primary_disease",
    "DEMOGRAPHIC.insurance",
    "DIAGNOSES.icd9_code",
    "DIAGNOSES.short_title",
    "DIAGNOSES.long_title",
    "PROCEDURES.icd9_code",
    "PROCEDURES.short_title",
    "PROCEDURES.long_title",
    "PRESCRIPTIONS.drug",
    "PRESCRIPTIONS.dosage",
    "PRESCRIPTIONS.route",
    "LAB.itemid",
    "LAB.label",
    "LAB.valueuom",
];

/// Normal ranges, indexed like the lab label pool.
const LAB_RANGES: &[(f64, f64)] = &[
    (70.0, 100.0),
    (0.5, 1.2),
    (12.0, 17.0),
    (3.3, 5.1),
    (133.0, 145.0),
    (4.0, 11.0),
    (150.0, 440.0),
    (22.0, 32.0),
    (6.0, 20.0),
    (0.5, 2.0),
    (0.0, 1.0),
    (7.35, 7.45),
];

fn pool(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn default_vocabularies() -> BTreeMap<String, Vec<String>> {
    let diagnoses = [
        ("0389", "Septicemia NOS", "Unspecified septicemia"),
        (
            "486",
            "Pneumonia, organism NOS",
            "Pneumonia, organism unspecified",
        ),
        ("4280", "CHF NOS", "Congestive heart failure, unspecified"),
        (
            "5849",
            "Acute kidney failure NOS",
            "Acute kidney failure, unspecified",
        ),
        (
            "4019",
            "Hypertension NOS",
            "Unspecified essential hypertension",
        ),
        (
            "25000",
            "DMII wo cmp nt st uncntr",
            "Diabetes mellitus without mention of complication",
        ),
        ("2859", "Anemia NOS", "Anemia, unspecified"),
        ("42731", "Atrial fibrillation", "Atrial fibrillation"),
        (
            "5990",
            "Urin tract infection NOS",
            "Urinary tract infection, site not specified",
        ),
        (
            "2724",
            "Hyperlipidemia NEC/NOS",
            "Other and unspecified hyperlipidemia",
        ),
        (
            "41401",
            "Crnry athrscl natve vssl",
            "Coronary atherosclerosis of native coronary artery",
        ),
        (
            "51881",
            "Acute respiratry failure",
            "Acute respiratory failure",
        ),
        ("2762", "Acidosis", "Acidosis"),
        ("4240", "Mitral valve disorder", "Mitral valve disorders"),
    ];
    let procedures = [
        (
            "3893",
            "Venous cath NEC",
            "Venous catheterization, not elsewhere classified",
        ),
        (
            "9604",
            "Insert endotracheal tube",
            "Insertion of endotracheal tube",
        ),
        (
            "9671",
            "Cont inv mec ven <96 hrs",
            "Continuous invasive mechanical ventilation for less than 96 hours",
        ),
        (
            "3961",
            "Extracorporeal circulat",
            "Extracorporeal circulation auxiliary to open heart surgery",
        ),
        (
            "9904",
            "Packed cell transfusion",
            "Transfusion of packed cells",
        ),
        ("3995", "Hemodialysis", "Hemodialysis"),
        (
            "8856",
            "Coronar arteriogr-2 cath",
            "Coronary arteriography using two catheters",
        ),
        (
            "4513",
            "Sm bowel endoscopy NEC",
            "Other endoscopy of small intestine",
        ),
        (
            "3722",
            "Left heart cardiac cath",
            "Left heart cardiac catheterization",
        ),
        ("3491", "Thoracentesis", "Thoracentesis"),
    ];
    let drugs = [
        ("Aspirin", "325mg"),
        ("Heparin", "5000 units"),
        ("Insulin", "10 units"),
        ("Furosemide", "40mg"),
        ("Metoprolol", "25mg"),
        ("Vancomycin", "1g"),
        ("Acetaminophen", "650mg"),
        ("Potassium Chloride", "20mEq"),
        ("Pantoprazole", "40mg"),
        ("Docusate Sodium", "100mg"),
        ("Morphine Sulfate", "2mg"),
        ("Warfarin", "5mg"),
        ("Lisinopril", "10mg"),
        ("Atorvastatin", "80mg"),
        ("Ondansetron", "4mg"),
    ];
    let labs = [
        ("50931", "Glucose", "mg/dL"),
        ("50912", "Creatinine", "mg/dL"),
        ("51222", "Hemoglobin", "g/dL"),
        ("50971", "Potassium", "mEq/L"),
        ("50983", "Sodium", "mEq/L"),
        ("51301", "White Blood Cells", "K/uL"),
        ("51265", "Platelet Count", "K/uL"),
        ("50882", "Bicarbonate", "mEq/L"),
        ("51006", "Urea Nitrogen", "mg/dL"),
        ("50813", "Lactate", "mmol/L"),
        ("51516", "Renal Epithelial Cells", "#/hpf"),
        ("50820", "pH", "units"),
    ];

    let mut v = BTreeMap::new();
    v.insert(
        "DEMOGRAPHIC.name".into(),
        pool(&[
            "Mary Davis",
            "James Smith",
            "Linda Brown",
            "Robert Jones",
            "Patricia Miller",
            "John Wilson",
            "Barbara Moore",
            "Michael Taylor",
            "Elizabeth Anderson",
            "William Thomas",
            "Jennifer Jackson",
            "David White",
            "Susan Harris",
            "Richard Martin",
            "Jessica Thompson",
            "Joseph Garcia",
            "Sarah Martinez",
            "Charles Robinson",
            "Karen Clark",
            "Thomas Lewis",
            "Nancy Lee",
            "Daniel Walker",
            "Lisa Hall",
            "Matthew Allen",
        ]),
    );
    v.insert("DEMOGRAPHIC.gender".into(), pool(&["M", "F"]));
    v.insert(
        "DEMOGRAPHIC.primary_disease".into(),
        pool(&[
            "SEPSIS",
            "PNEUMONIA",
            "CORONARY ARTERY DISEASE",
            "CONGESTIVE HEART FAILURE",
            "GASTROINTESTINAL BLEED",
            "ACUTE KIDNEY FAILURE",
            "DIABETIC KETOACIDOSIS",
            "STROKE",
            "ABDOMINAL PAIN",
            "CHEST PAIN",
            "HYPOTENSION",
            "ALTERED MENTAL STATUS",
        ]),
    );
    v.insert(
        "DEMOGRAPHIC.insurance".into(),
        pool(&["Medicare", "Private", "Medicaid", "Government", "Self Pay"]),
    );
    for (table, rows) in [
        ("DIAGNOSES", &diagnoses[..]),
        ("PROCEDURES", &procedures[..]),
    ] {
        v.insert(
            format!("{table}.icd9_code"),
            rows.iter().map(|r| r.0.to_string()).collect(),
        );
        v.insert(
            format!("{table}.short_title"),
            rows.iter().map(|r| r.1.to_string()).collect(),
        );
        v.insert(
            format!("{table}.long_title"),
            rows.iter().map(|r| r.2.to_string()).collect(),
        );
    }
    v.insert(
        "PRESCRIPTIONS.drug".into(),
        drugs.iter().map(|d| d.0.to_string()).collect(),
    );
    v.insert(
        "PRESCRIPTIONS.dosage".into(),
        drugs.iter().map(|d| d.1.to_string()).collect(),
    );
    v.insert(
        "PRESCRIPTIONS.route".into(),
        pool(&["PO", "IV", "SC", "IM", "NG"]),
    );
    v.insert(
        "LAB.itemid".into(),
        labs.iter().map(|l| l.0.to_string()).collect(),
    );
    v.insert(
        "LAB.label".into(),
        labs.iter().map(|l| l.1.to_string()).collect(),
    );
    v.insert(
        "LAB.valueuom".into(),
        labs.iter().map(|l| l.2.to_string()).collect(),
    );
    v
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub tables: TableSet,
    pub repository: Repository,
    pub pairs: Vec<QaPair>,
}

/// What the question templates need to know about one patient.
struct Facts {
    id: String,
    gender: String,
    age: i64,
    primary_disease: String,
    insurance: String,
    days_stay: i64,
    diagnoses: Vec<String>,
    procedures: Vec<String>,
    drugs: Vec<(String, String)>,
    labs: Vec<(String, bool)>,
}

const DATE_FMT: &str = "%Y-%m-%d %H:%M:%S";

fn fmt_ts(t: NaiveDateTime) -> String {
    t.format(DATE_FMT).to_string()
}

fn text(s: &str) -> Option<Value> {
    Some(Value::Text(s.to_string()))
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [String]) -> (usize, &'a str) {
    let i = rng.gen_range(0..items.len());
    (i, items[i].as_str())
}

fn linked(items: &[String], i: usize) -> &str {
    &items[i % items.len()]
}

fn rows_between(rng: &mut ChaCha8Rng, r: RowRange) -> usize {
    rng.gen_range(r.min..=r.max)
}

/// Generates tables, the derived repository and the question/SQL bank.
/// Identical specs produce identical outputs.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus, IngestError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tables = TableSet::empty_schema();
    let mut facts = Vec::with_capacity(spec.n_patients);
    let epoch = NaiveDate::from_ymd_opt(2100, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();

    for i in 0..spec.n_patients {
        let subject = format!("{}", 10001 + i);
        let hadm = format!("{}", 200001 + i);
        let sid = || text(&subject);
        let hid = || text(&hadm);

        let gender = pick(&mut rng, spec.pool("DEMOGRAPHIC.gender"))
            .1
            .to_string();
        let age: i64 = rng.gen_range(18..=90);
        let days_stay: i64 = rng.gen_range(1..=30);
        let primary_disease = pick(&mut rng, spec.pool("DEMOGRAPHIC.primary_disease"))
            .1
            .to_string();
        let insurance = pick(&mut rng, spec.pool("DEMOGRAPHIC.insurance"))
            .1
            .to_string();
        let name = pick(&mut rng, spec.pool("DEMOGRAPHIC.name")).1.to_string();
        let admit = epoch
            + Duration::days(rng.gen_range(0..36_500))
            + Duration::minutes(rng.gen_range(0..24 * 60));
        let discharge = admit + Duration::days(days_stay);
        let dob = (admit - Duration::days(age * 365 + rng.gen_range(0..365)))
            .date()
            .and_hms_opt(0, 0, 0)
            .unwrap();

        for _ in 0..rows_between(&mut rng, spec.range(TableName::Demographic)) {
            tables.rows_mut(TableName::Demographic).push(vec![
                sid(),
                text(&name),
                text(&gender),
                Some(Value::DateTime(fmt_ts(dob))),
                Some(Value::Number(age as f64)),
                Some(Value::DateTime(fmt_ts(admit))),
                Some(Value::DateTime(fmt_ts(discharge))),
                Some(Value::Number(days_stay as f64)),
                text(&primary_disease),
                text(&insurance),
            ]);
        }

        let mut coded = |table: TableName, rng: &mut ChaCha8Rng| -> Vec<String> {
            let prefix = table.as_str();
            let titles = spec.pool(&format!("{prefix}.short_title"));
            let n = rows_between(rng, spec.range(table)).min(titles.len());
            let chosen = rand::seq::index::sample(rng, titles.len(), n).into_vec();
            let mut out = Vec::new();
            for k in chosen {
                tables.rows_mut(table).push(vec![
                    sid(),
                    hid(),
                    text(linked(spec.pool(&format!("{prefix}.icd9_code")), k)),
                    text(&titles[k]),
                    text(linked(spec.pool(&format!("{prefix}.long_title")), k)),
                ]);
                out.push(titles[k].clone());
            }
            out
        };
        let diagnoses = coded(TableName::Diagnoses, &mut rng);
        let procedures = coded(TableName::Procedures, &mut rng);

        let mut drugs = Vec::new();
        for _ in 0..rows_between(&mut rng, spec.range(TableName::Prescriptions)) {
            let (k, drug) = pick(&mut rng, spec.pool("PRESCRIPTIONS.drug"));
            let route = pick(&mut rng, spec.pool("PRESCRIPTIONS.route")).1;
            tables.rows_mut(TableName::Prescriptions).push(vec![
                sid(),
                hid(),
                text(drug),
                text(linked(spec.pool("PRESCRIPTIONS.dosage"), k)),
                text(route),
            ]);
            drugs.push((drug.to_string(), route.to_string()));
        }

        let mut labs = Vec::new();
        let window = (discharge - admit).num_minutes().max(1);
        for _ in 0..rows_between(&mut rng, spec.range(TableName::Lab)) {
            let (k, label) = pick(&mut rng, spec.pool("LAB.label"));
            let (lo, hi) = LAB_RANGES[k % LAB_RANGES.len()];
            let span = (hi - lo).max(1.0);
            let raw = rng.gen_range(lo - 0.3 * span..hi + 0.3 * span).max(0.0);
            let value = (raw * 10.0).round() / 10.0;
            let abnormal = value < lo || value > hi;
            let charttime = admit + Duration::minutes(rng.gen_range(0..window));
            tables.rows_mut(TableName::Lab).push(vec![
                sid(),
                hid(),
                text(linked(spec.pool("LAB.itemid"), k)),
                text(label),
                Some(Value::Number(value)),
                text(linked(spec.pool("LAB.valueuom"), k)),
                if abnormal { text("abnormal") } else { None },
                Some(Value::DateTime(fmt_ts(charttime))),
            ]);
            labs.push((label.to_string(), abnormal));
        }

        facts.push(Facts {
            id: subject,
            gender,
            age,
            primary_disease,
            insurance,
            days_stay,
            diagnoses,
            procedures,
            drugs,
            labs,
        });
    }

    let mut pairs = single_questions(spec, &facts, &mut rng);
    pairs.extend(multiple_questions(spec, &facts, &mut rng));
    let repository = build_repository(tables.clone())?;
    Ok(SynthCorpus {
        tables,
        repository,
        pairs,
    })
}

fn lit(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn single(question: String, sql: String) -> QaPair {
    QaPair {
        question,
        sql,
        kind: PairKind::Single,
    }
}

fn multiple(question: String, sql: String) -> QaPair {
    QaPair {
        question,
        sql,
        kind: PairKind::Multiple,
    }
}

const SINGLE_TEMPLATES: usize = 12;

fn single_template(t: usize, f: &Facts, rng: &mut ChaCha8Rng) -> Option<QaPair> {
    let id = &f.id;
    let demo =
        |cols: &str| format!("SELECT {cols} FROM DEMOGRAPHIC WHERE DEMOGRAPHIC.subject_id = {id}");
    Some(match t {
        0 => single(format!("What is the gender of patient {id}?"), demo("DEMOGRAPHIC.gender")),
        1 => single(
            format!("Give the primary disease and icd9 code for patient id {id}."),
            format!(
                "SELECT DISTINCT DEMOGRAPHIC.primary_disease, DIAGNOSES.icd9_code FROM DEMOGRAPHIC \
                 INNER JOIN DIAGNOSES ON DEMOGRAPHIC.subject_id = DIAGNOSES.subject_id \
                 WHERE DEMOGRAPHIC.subject_id = {id}"
            ),
        ),
        2 => single(
            format!("What is the age and insurance type of patient {id}?"),
            demo("DEMOGRAPHIC.age, DEMOGRAPHIC.insurance"),
        ),
        3 => single(
            format!("Which drugs were prescribed to patient {id}?"),
            format!("SELECT DISTINCT PRESCRIPTIONS.drug FROM PRESCRIPTIONS WHERE PRESCRIPTIONS.subject_id = {id}"),
        ),
        4 => single(format!("When was patient {id} admitted to the hospital?"), demo("DEMOGRAPHIC.admission_time")),
        5 if !f.procedures.is_empty() => single(
            format!("What procedures did patient {id} undergo?"),
            format!("SELECT DISTINCT PROCEDURES.short_title FROM PROCEDURES WHERE PROCEDURES.subject_id = {id}"),
        ),
        6 if !f.labs.is_empty() => {
            let label = &f.labs.choose(rng)?.0;
            single(
                format!("What is the maximum {label} value measured for patient {id}?"),
                format!(
                    "SELECT MAX(LAB.value) FROM LAB WHERE LAB.subject_id = {id} AND LAB.label = {}",
                    lit(label)
                ),
            )
        }
        7 => single(
            format!("How many abnormal lab results does patient {id} have?"),
            format!("SELECT COUNT(LAB.flag) FROM LAB WHERE LAB.subject_id = {id} AND LAB.flag = \"abnormal\""),
        ),
        8 if !f.drugs.is_empty() => {
            let drug = &f.drugs.choose(rng)?.0;
            single(
                format!("What is the route of administration of {drug} for patient {id}?"),
                format!(
                    "SELECT DISTINCT PRESCRIPTIONS.route FROM PRESCRIPTIONS WHERE PRESCRIPTIONS.subject_id = {id} \
                     AND PRESCRIPTIONS.drug = {}",
                    lit(drug)
                ),
            )
        }
        9 => single(
            format!("How many days did patient {id} stay in the hospital and when were they discharged?"),
            demo("DEMOGRAPHIC.days_stay, DEMOGRAPHIC.discharge_time"),
        ),
        10 if !f.diagnoses.is_empty() => single(
            format!("What is the diagnosis short title of patient {id}?"),
            format!("SELECT DISTINCT DIAGNOSES.short_title FROM DIAGNOSES WHERE DIAGNOSES.subject_id = {id}"),
        ),
        11 if f.labs.iter().any(|l| l.1) => single(
            format!("Which lab tests of patient {id} were flagged abnormal?"),
            format!("SELECT DISTINCT LAB.label FROM LAB WHERE LAB.subject_id = {id} AND LAB.flag = \"abnormal\""),
        ),
        _ => return None,
    })
}

fn single_questions(spec: &SynthSpec, facts: &[Facts], rng: &mut ChaCha8Rng) -> Vec<QaPair> {
    let n = facts.len();
    let base = spec.single_questions / n;
    let mut extra: Vec<usize> = (0..n).collect();
    extra.shuffle(rng);
    extra.truncate(spec.single_questions % n);
    extra.sort_unstable();

    let mut out = Vec::with_capacity(spec.single_questions);
    for (i, f) in facts.iter().enumerate() {
        let count = base + usize::from(extra.binary_search(&i).is_ok());
        let mut order: Vec<usize> = (0..SINGLE_TEMPLATES).collect();
        order.shuffle(rng);
        let mut made = 0;
        let mut cursor = 0;
        // templates 0-4, 7 and 9 always apply, so this terminates
        while made < count {
            if let Some(pair) = single_template(order[cursor % SINGLE_TEMPLATES], f, rng) {
                out.push(pair);
                made += 1;
            }
            cursor += 1;
        }
    }
    out
}

const MULTIPLE_TEMPLATES: usize = 8;

fn multiple_template(t: usize, f: &Facts, rng: &mut ChaCha8Rng) -> Option<QaPair> {
    let join = |other: &str| {
        format!(
            "FROM DEMOGRAPHIC INNER JOIN {other} ON DEMOGRAPHIC.subject_id = {other}.subject_id"
        )
    };
    Some(match t {
        0 => {
            let label = &f.labs.choose(rng)?.0;
            let word = if f.gender == "F" { "female" } else { "male" };
            multiple(
                format!("Count the {word} patients that had a {label} lab test."),
                format!(
                    "SELECT COUNT(DISTINCT DEMOGRAPHIC.subject_id) {} WHERE DEMOGRAPHIC.gender = {} AND LAB.label = {}",
                    join("LAB"),
                    lit(&f.gender),
                    lit(label)
                ),
            )
        }
        1 => {
            let title = f.diagnoses.choose(rng)?;
            multiple(
                format!("How many patients were diagnosed with {title}?"),
                format!(
                    "SELECT COUNT(DISTINCT DIAGNOSES.subject_id) FROM DIAGNOSES WHERE DIAGNOSES.short_title = {}",
                    lit(title)
                ),
            )
        }
        2 => {
            let drug = &f.drugs.choose(rng)?.0;
            multiple(
                format!("Count the patients who were prescribed {drug}."),
                format!(
                    "SELECT COUNT(DISTINCT PRESCRIPTIONS.subject_id) FROM PRESCRIPTIONS WHERE PRESCRIPTIONS.drug = {}",
                    lit(drug)
                ),
            )
        }
        3 => {
            let title = f.procedures.choose(rng)?;
            multiple(
                format!("What is the number of patients who underwent {title}?"),
                format!(
                    "SELECT COUNT(DISTINCT PROCEDURES.subject_id) FROM PROCEDURES WHERE PROCEDURES.short_title = {}",
                    lit(title)
                ),
            )
        }
        4 => {
            let days = (f.days_stay - 1).max(0);
            multiple(
                format!(
                    "How many {} insurance patients stayed in the hospital for more than {days} days?",
                    f.insurance
                ),
                format!(
                    "SELECT COUNT(DISTINCT DEMOGRAPHIC.subject_id) FROM DEMOGRAPHIC WHERE DEMOGRAPHIC.insurance = {} \
                     AND DEMOGRAPHIC.days_stay > {days}",
                    lit(&f.insurance)
                ),
            )
        }
        5 => {
            let age = f.age + 1;
            multiple(
                format!(
                    "How many patients with primary disease {} are younger than {age}?",
                    f.primary_disease
                ),
                format!(
                    "SELECT COUNT(DISTINCT DEMOGRAPHIC.subject_id) FROM DEMOGRAPHIC WHERE \
                     DEMOGRAPHIC.primary_disease = {} AND DEMOGRAPHIC.age < {age}",
                    lit(&f.primary_disease)
                ),
            )
        }
        6 => {
            let (drug, route) = f.drugs.choose(rng)?;
            multiple(
                format!("Which patients were prescribed {drug} via {route} route?"),
                format!(
                    "SELECT DISTINCT PRESCRIPTIONS.subject_id FROM PRESCRIPTIONS WHERE PRESCRIPTIONS.drug = {} \
                     AND PRESCRIPTIONS.route = {}",
                    lit(drug),
                    lit(route)
                ),
            )
        }
        7 => {
            let abnormal: Vec<&String> = f.labs.iter().filter(|l| l.1).map(|l| &l.0).collect();
            let label = *abnormal.choose(rng)?;
            multiple(
                format!("How many patients had an abnormal {label} lab test?"),
                format!(
                    "SELECT COUNT(DISTINCT LAB.subject_id) FROM LAB WHERE LAB.label = {} AND LAB.flag = \"abnormal\"",
                    lit(label)
                ),
            )
        }
        _ => return None,
    })
}

fn multiple_questions(spec: &SynthSpec, facts: &[Facts], rng: &mut ChaCha8Rng) -> Vec<QaPair> {
    let mut out = Vec::with_capacity(spec.multiple_questions);
    let mut attempts = 0;
    while out.len() < spec.multiple_questions && attempts < spec.multiple_questions * 50 {
        attempts += 1;
        let template = rng.gen_range(0..MULTIPLE_TEMPLATES);
        let anchor = &facts[rng.gen_range(0..facts.len())];
        if let Some(pair) = multiple_template(template, anchor, rng) {
            out.push(pair);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{repository_stats, save_snapshot, validate_repository};

    fn small(n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            n_patients: n,
            seed,
            single_questions: n * 3,
            multiple_questions: 20,
            ..SynthSpec::default()
        }
    }

    fn snapshot_bytes(corpus: &SynthCorpus) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        save_snapshot(&corpus.repository, dir.path()).unwrap();
        let mut files: Vec<_> = walk(dir.path());
        files.sort();
        let mut bytes = Vec::new();
        for f in files {
            bytes.extend(std::fs::read(&f).unwrap());
        }
        for p in &corpus.pairs {
            bytes.extend(serde_json::to_vec(p).unwrap());
        }
        bytes
    }

    fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec {
            n_patients: 1,
            seed: 1,
            ..small(1, 1)
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(snapshot_bytes(&a), snapshot_bytes(&b));
    }

    #[test]
    fn patient_count_echoes_spec() {
        let corpus = generate_synthetic(&SynthSpec {
            n_patients: 100,
            seed: 7,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(
            repository_stats(&corpus.repository).unwrap().n_patients,
            100
        );
        assert!(validate_repository(&corpus.repository).is_empty());
        assert_eq!(
            corpus
                .pairs
                .iter()
                .filter(|p| p.kind == PairKind::Single)
                .count(),
            1329
        );
    }

    #[test]
    fn empty_pool_is_an_error() {
        let mut spec = small(3, 1);
        spec.vocabularies.insert("LAB.label".into(), vec![]);
        let err = generate_synthetic(&spec).unwrap_err();
        assert!(err.to_string().contains("LAB.label"));
    }

    #[test]
    fn spec_file_keys() {
        let spec = SynthSpec::from_toml(
            "n_patients = 12\nseed = 99\n[tables.LAB]\nrows = \"1..2\"\n[questions]\nsingle = 24\n",
        )
        .unwrap();
        assert_eq!(spec.n_patients, 12);
        assert_eq!(spec.seed, 99);
        assert_eq!(spec.rows[&TableName::Lab], RowRange::new(1, 2));
        assert_eq!(spec.single_questions, 24);
        assert!(SynthSpec::from_toml("bogus = 1").is_err());
        assert!(SynthSpec::from_toml("[tables.LAB]\nrows = \"3\"").is_err());
    }

    #[test]
    fn lab_flags_are_sparse() {
        let corpus = generate_synthetic(&small(30, 3)).unwrap();
        let rows: &[crate::ingest::Row] = corpus.tables.rows(TableName::Lab);
        assert!(rows.iter().any(|r| r[6].is_none()));
        assert!(rows.iter().any(|r| r[6].is_some()));
    }
}
