"""Small record factories shared by the tests."""

from serpaudit.model import BotType, Query, QueryCategory, RankedResult, SerpRecord, Status

GQ = Query("best movies ever", QueryCategory.GENERAL, True)
SQ = Query("Hamas", QueryCategory.SPECIFIC, True)


def serp(bot, loc, urls, query=GQ, audit="a", engine="e", ip=None, status=Status.OK,
         bot_type=BotType.TYPE1, ts=0):
    results = tuple(RankedResult(i, u) for i, u in enumerate(urls, start=1))
    return SerpRecord(audit, engine, bot, query, ts, results if status is Status.OK else (),
                      status, bot_type, loc, "en", ip_label=ip or bot)


def urls(*names, host="example.com"):
    return [f"https://{host}/{n}" for n in names]


def success_rule_fixtures():
    """Records covering every branch of the success rule, plus the hand-enumerated outcome.

    Returns (records, kept bot ids, excluded cells as (audit, engine, location, query text)).
    """
    from serpaudit.model import Status

    u4, u3, u10 = urls(*"abcd"), urls(*"abc"), urls(*"abcdefghij")
    recs = [
        # 1: three IPs with >= 4 URLs -> kept
        serp("k1", "IL", u4), serp("k2", "IL", u10), serp("k3", "IL", u4),
        # 2: two qualifying IPs and one with only 3 URLs -> cell dropped
        serp("d1", "SA", u4), serp("d2", "SA", u4), serp("d3", "SA", u3),
        # 3: three qualifying records but two share an IP -> dropped
        serp("s1", "BR", u4, ip="ipA"), serp("s2", "BR", u4, ip="ipA"), serp("s3", "BR", u4, ip="ipB"),
        # 4: captcha attempt then success on retry from the same IP, two others -> kept,
        #    failed attempt removed
        serp("r1", "US_NY", [], status=Status.CAPTCHA_BLOCKED, ts=1), serp("r1", "US_NY", u4, ts=2),
        serp("r2", "US_NY", u4), serp("r3", "US_NY", u4),
        # 5: same IP qualifies twice -> only the first record of that IP kept
        serp("m1", "IL", u4, query=SQ, ip="ipM"), serp("m2", "IL", u10, query=SQ, ip="ipM"),
        serp("m3", "IL", u4, query=SQ), serp("m4", "IL", u4, query=SQ),
        # 6: cells are per audit id: three IPs split over two audits -> both dropped
        serp("a1", "SA", u4, query=SQ, audit="x"), serp("a2", "SA", u4, query=SQ, audit="x"),
        serp("a3", "SA", u4, query=SQ, audit="y"),
        # 7: cells are per engine: same split over engines -> both dropped
        serp("e1", "BR", u4, query=SQ, engine="e1"), serp("e2", "BR", u4, query=SQ, engine="e1"),
        serp("e3", "BR", u4, query=SQ, engine="e2"),
    ]
    kept = {"k1", "k2", "k3", "r1", "r2", "r3", "m1", "m3", "m4"}
    dropped = {("a", "e", "SA", GQ.text), ("a", "e", "BR", GQ.text),
               ("x", "e", "SA", SQ.text), ("y", "e", "SA", SQ.text),
               ("a", "e1", "BR", SQ.text), ("a", "e2", "BR", SQ.text)}
    return recs, kept, dropped
