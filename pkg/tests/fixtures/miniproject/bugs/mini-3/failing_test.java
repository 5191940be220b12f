@Test
public void testFebruaryOfCenturyLeapYear() {
    DateParser p = new DateParser();
    assertEquals(29, p.daysInMonth(2000, 2));
}
