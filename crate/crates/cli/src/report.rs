//! CSV reports.

use capsdbn_core::eval::{AucReport, ConfusionMatrix, EpochTrace, MetricsReport};

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("writing to memory cannot fail")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// `epoch,train_loss,train_acc,val_loss,val_acc`
pub fn curves_csv(traces: &[EpochTrace]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]).unwrap();
    for t in traces {
        w.write_record([
            t.epoch.to_string(),
            fmt(t.train_loss),
            fmt(t.train_accuracy),
            fmt(t.val_loss),
            fmt(t.val_accuracy),
        ])
        .unwrap();
    }
    finish(w)
}

/// `category,precision,recall,f1,support`
pub fn metrics_csv(report: &MetricsReport, names: &[String]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["category", "precision", "recall", "f1", "support"]).unwrap();
    for (m, name) in report.per_category.iter().zip(names) {
        w.write_record([name.clone(), fmt(m.precision), fmt(m.recall), fmt(m.f1), m.support.to_string()]).unwrap();
    }
    finish(w)
}

/// Rows are true categories, columns predicted categories.
pub fn confusion_csv(cm: &ConfusionMatrix, names: &[String]) -> Vec<u8> {
    let mut w = writer();
    let mut header = vec!["truth".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).unwrap();
    for (t, name) in names.iter().enumerate().take(cm.categories()) {
        let mut row = vec![name.clone()];
        row.extend(cm.row(t).iter().map(|c| c.to_string()));
        w.write_record(&row).unwrap();
    }
    finish(w)
}

/// `split,category,auc`; categories without both classes are written as `NA`.
pub fn auc_csv(reports: &[(&str, &AucReport)], names: &[String]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["split", "category", "auc"]).unwrap();
    let show = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt);
    for (split, r) in reports {
        for (auc, name) in r.per_category.iter().zip(names) {
            w.write_record([split.to_string(), name.clone(), show(*auc)]).unwrap();
        }
        w.write_record([split.to_string(), "macro".into(), show(r.macro_auc)]).unwrap();
    }
    finish(w)
}

/// `layer,epoch,reconstruction_error`
pub fn dbn_errors_csv(traces: &[Vec<f64>]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["layer", "epoch", "reconstruction_error"]).unwrap();
    for (l, t) in traces.iter().enumerate() {
        for (e, v) in t.iter().enumerate() {
            w.write_record([(l + 1).to_string(), (e + 1).to_string(), format!("{v:.8}")]).unwrap();
        }
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use capsdbn_core::eval::{confusion, precision_recall_f1};

    fn names() -> Vec<String> {
        ["a", "b, c", "d"].map(String::from).to_vec()
    }

    #[test]
    fn perfect_predictions_give_unit_rows() {
        let truth = [0, 1, 2, 2, 1, 0, 0];
        let r = precision_recall_f1(&confusion(&truth, &truth, 3).unwrap());
        let text = String::from_utf8(metrics_csv(&r, &names())).unwrap();
        assert_eq!(
            text,
            "category,precision,recall,f1,support\n\
             a,1.000000,1.000000,1.000000,3\n\
             \"b, c\",1.000000,1.000000,1.000000,2\n\
             d,1.000000,1.000000,1.000000,2\n"
        );
    }

    #[test]
    fn confusion_layout() {
        let cm = confusion(&[0, 0, 2], &[0, 1, 2], 3).unwrap();
        let text = String::from_utf8(confusion_csv(&cm, &names())).unwrap();
        assert_eq!(text, "truth,a,\"b, c\",d\na,1,1,0\n\"b, c\",0,0,0\nd,0,0,1\n");
    }

    #[test]
    fn curves_header() {
        let t = EpochTrace { epoch: 1, train_loss: 0.5, train_accuracy: 0.25, val_loss: 0.75, val_accuracy: 1.0 };
        let text = String::from_utf8(curves_csv(&[t])).unwrap();
        assert_eq!(text, "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.500000,0.250000,0.750000,1.000000\n");
    }
}
